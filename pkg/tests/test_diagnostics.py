from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbal.data import Dataset, TargetSpec
from xbal.diagnostics import (
    balance,
    diagnose,
    ess,
    in_convex_hull,
    negative_influence,
    simplex_balance,
    simplex_projection,
)

from .conftest import random_instance


def test_negative_influence_examples():
    assert negative_influence([-1.0, 2.0]) == pytest.approx(1 / 3)
    assert negative_influence([0.2, 0.8]) == 0.0
    assert negative_influence([-1.0, 1.0]) == 0.5
    with pytest.raises(ValueError):
        negative_influence([0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_negative_influence_scale_invariant(seed, c):
    w = np.random.default_rng(seed).standard_normal(7)
    assert negative_influence(c * w) == pytest.approx(negative_influence(w), rel=1e-12)


def test_balance_examples(two_point, rng):
    data, target = two_point
    assert balance([0.0, 1.0], data, target) == 1.0
    assert balance([0.0, 1.0], data, target, "linf") == 1.0
    data, _ = random_instance(rng, n=6, d=3)
    w = rng.standard_normal(6)
    exact = TargetSpec(point=data.features.T @ w)
    assert balance(w, data, exact) <= 1e-12


def test_balance_matches_scalar(rng):
    data, target = random_instance(rng, n=9, d=4)
    w = rng.standard_normal(9)
    X, xs = data.features.tolist(), target.point.tolist()
    gaps = [sum(w[i] * X[i][j] for i in range(9)) - xs[j] for j in range(4)]
    assert balance(w, data, target) == pytest.approx(math.sqrt(sum(g * g for g in gaps) / 4), rel=1e-13)
    assert balance(w, data, target, "linf") == pytest.approx(max(abs(g) for g in gaps), rel=1e-13)


def test_ess_examples():
    assert ess(np.full(5, 0.2)) == pytest.approx(5.0)
    assert ess([0.0, 1.0, 0.0]) == 1.0
    assert ess([0.5, 0.5, 0.0]) == 2.0


def test_hull_membership_examples(rng):
    data = Dataset([[1.0], [2.0]], [0, 0])
    assert not in_convex_hull(data, TargetSpec(point=[3.0]))
    assert in_convex_hull(data, TargetSpec(point=[1.5]))
    data, _ = random_instance(rng, n=8, d=3)
    for i in range(8):
        assert in_convex_hull(data, TargetSpec(point=data.features[i]))


def test_hull_membership_permutation_invariant(rng):
    for _ in range(20):
        data, target = random_instance(rng, n=12, d=2)
        perm = rng.permutation(12)
        shuffled = Dataset(data.features[perm], data.outcomes[perm])
        assert in_convex_hull(data, target) == in_convex_hull(shuffled, target)


def test_hull_membership_against_convex_combination(rng):
    for _ in range(20):
        X = rng.standard_normal((10, 3))
        inside = rng.dirichlet(np.ones(10)) @ X
        assert in_convex_hull(Dataset(X, np.zeros(10)), TargetSpec(point=inside))
        far = X.max(axis=0) + 1.0
        assert not in_convex_hull(Dataset(X, np.zeros(10)), TargetSpec(point=far))


def test_simplex_projection(rng):
    for _ in range(50):
        v = rng.standard_normal(6) * 3
        p = simplex_projection(v)
        assert p.min() >= 0 and p.sum() == pytest.approx(1.0)
        # optimality: no feasible vertex direction improves the distance
        for e in np.eye(6):
            assert (v - p) @ (e - p) <= 1e-10


def test_simplex_balance_against_grid():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    point = np.array([1.0, 1.0])
    w, f = simplex_balance(X, point, lam=0.1)
    grid = np.linspace(0, 1, 401)
    best = math.inf
    for a in grid:
        for b in grid[grid <= 1 - a + 1e-12]:
            v = np.array([1 - a - b, a, b])
            r = X.T @ v - point
            best = min(best, r @ r + 0.1 * v @ v)
    assert f <= best + 1e-12
    assert f == pytest.approx(best, abs=1e-4)


def test_diagnose_record(two_point):
    data, target = two_point
    rec = diagnose([-1.0, 2.0], data, target)
    assert rec.negative_influence == pytest.approx(1 / 3)
    assert rec.balance_rmse == pytest.approx(0.0, abs=1e-15)
    assert rec.ess == pytest.approx(1 / 5)
    assert not rec.in_hull
    assert rec.sum_weights == 1.0
    assert set(rec.as_dict()) >= {"negative_influence", "balance_rmse", "l2_norm", "ess"}
