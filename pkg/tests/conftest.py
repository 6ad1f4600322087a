from __future__ import annotations

import numpy as np
import pytest

from xbal.data import Dataset, TargetSpec
from xbal.dgp import Kind, ScenarioSpec, generate


def random_instance(rng: np.random.Generator, n: int = 20, d: int = 5) -> tuple[Dataset, TargetSpec]:
    X = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    return Dataset(X, y), TargetSpec(point=rng.standard_normal(d))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def two_point() -> tuple[Dataset, TargetSpec]:
    """X = [[1], [2]], x* = [3]: the target lies outside the segment."""
    return Dataset([[1.0], [2.0]], [1.0, 2.0]), TargetSpec(point=[3.0])


@pytest.fixture
def hull_instance():
    """Reference 10-unit, 2-feature scenario with the target outside the hull."""
    return generate(ScenarioSpec(kind=Kind.LINEAR))


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(test_acceptance.RESULTS):
        ok, detail = test_acceptance.RESULTS[number]
        terminalreporter.write_line(test_acceptance._line(number, ok, detail))
