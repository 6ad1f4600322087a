"""Shared domain types, validation, CSV ingestion and min-max scaling."""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (singular system, divergence, non-finite values)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class ImbalanceNorm(str, enum.Enum):
    L2 = "l2"
    LINF = "linf"


class ExtrapNorm(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"


@dataclass(frozen=True)
class Dataset:
    """Source sample: an ``n x d`` feature matrix, outcomes and unit labels.

    Arrays are copied and made read-only on construction.
    """

    features: np.ndarray
    outcomes: np.ndarray
    unit_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError(f"features must be a 2-d matrix, got shape {X.shape}")
        n, d = X.shape
        if n < 1:
            raise DataError("empty input: no rows")
        if d < 1:
            raise DataError("empty input: no feature columns")
        y = np.asarray(self.outcomes, dtype=float).reshape(-1)
        if y.shape[0] != n:
            raise DataError(
                f"dimension mismatch: {y.shape[0]} outcomes for {n} feature rows"
            )
        bad = np.argwhere(~np.isfinite(X))
        if bad.size:
            i, j = bad[0]
            raise DataError(f"non-finite feature value at row {i}, column {j}")
        bad_y = np.flatnonzero(~np.isfinite(y))
        if bad_y.size:
            raise DataError(f"non-finite outcome at row {bad_y[0]}")
        ids = tuple(str(u) for u in self.unit_ids) if len(self.unit_ids) else tuple(
            str(i) for i in range(n)
        )
        if len(ids) != n:
            raise DataError(f"dimension mismatch: {len(ids)} unit ids for {n} rows")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "outcomes", _frozen(y))
        object.__setattr__(self, "unit_ids", ids)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def with_outcomes(self, outcomes: np.ndarray) -> "Dataset":
        return Dataset(self.features, outcomes, self.unit_ids)


@dataclass(frozen=True)
class TargetSpec:
    """Target point ``x*``, optionally derived from a target sample.

    When only ``sample`` is given the point is its column mean. When both are
    given the explicit point wins.
    """

    point: np.ndarray | None = None
    sample: np.ndarray | None = None

    def __post_init__(self) -> None:
        sample = self.sample
        if sample is not None:
            sample = np.asarray(sample, dtype=float)
            if sample.ndim == 1:
                sample = sample.reshape(1, -1)
            if sample.shape[0] < 1:
                raise DataError("target sample has no rows")
            if not np.all(np.isfinite(sample)):
                raise DataError("non-finite value in target sample")
            object.__setattr__(self, "sample", _frozen(sample))
        if self.point is None:
            if sample is None:
                raise DataError("target needs a point or a sample")
            point = sample.mean(axis=0)
        else:
            point = np.asarray(self.point, dtype=float).reshape(-1)
        if point.size < 1 or not np.all(np.isfinite(point)):
            raise DataError("target point must be a non-empty finite vector")
        if sample is not None and sample.shape[1] != point.size:
            raise DataError("target point and target sample differ in dimension")
        object.__setattr__(self, "point", _frozen(point))

    @property
    def d(self) -> int:
        return self.point.size

    def check(self, data: Dataset) -> None:
        if self.d != data.d:
            raise DataError(
                f"dimension mismatch: target has {self.d} features, source has {data.d}"
            )


@dataclass(frozen=True)
class HolderParams:
    """Hölder constant ``a``, exponent ``alpha``, noise scale ``sigma`` and confidence ``delta``."""

    a: float = 1.0
    alpha: float = 1.0
    sigma: float = 0.0
    delta: float = 0.05

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise DataError(f"Hölder constant a must be > 0, got {self.a}")
        if not self.alpha > 0:
            raise DataError(f"Hölder exponent alpha must be > 0, got {self.alpha}")
        if not self.sigma >= 0:
            raise DataError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 < self.delta < 1:
            raise DataError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class ProblemConfig:
    """Hyperparameters of the penalized balancing objective.

    ``centered_penalty`` swaps ``||X_i||`` for ``||X_i - x*||`` inside the
    extrapolation term.
    """

    lam: float = 0.1
    gamma: float = 0.0
    p_imbalance: ImbalanceNorm = ImbalanceNorm.L2
    p_extrap: ExtrapNorm = ExtrapNorm.L1
    normalize_sum_to_one: bool = True
    holder: HolderParams = field(default_factory=HolderParams)
    centered_penalty: bool = False

    def __post_init__(self) -> None:
        if not self.lam >= 0:
            raise DataError(f"lambda must be >= 0, got {self.lam}")
        if not self.gamma >= 0:
            raise DataError(f"gamma must be >= 0, got {self.gamma}")
        object.__setattr__(self, "p_imbalance", ImbalanceNorm(self.p_imbalance))
        object.__setattr__(self, "p_extrap", ExtrapNorm(self.p_extrap))

    def with_(self, **changes: Any) -> "ProblemConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "gamma": self.gamma,
            "p_imbalance": self.p_imbalance.value,
            "p_extrap": self.p_extrap.value,
            "normalize_sum_to_one": self.normalize_sum_to_one,
            "centered_penalty": self.centered_penalty,
            "holder_a": self.holder.a,
            "alpha": self.holder.alpha,
            "sigma": self.holder.sigma,
            "delta": self.holder.delta,
        }


@dataclass(frozen=True)
class SolverConfig:
    """Adam settings.

    The run stops early once the best objective has improved by less than
    ``tolerance`` over the last ``patience`` epochs.

    ``method="prox"`` applies the L1 extrapolation penalty through its exact
    proximal map (per-coordinate Adam step sizes); ``"subgradient"`` feeds
    its subgradient to Adam like every other term. ``normalization="project"``
    enforces ``sum(w) = 1`` inside the update; ``"rescale"`` divides by the
    sum after the update instead.
    """

    learning_rate: float = 0.01
    epochs: int = 5000
    tolerance: float = 1e-10
    patience: int = 100
    seed: int = 0
    method: str = "prox"
    normalization: str = "project"

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be > 0")
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.tolerance < 0:
            raise DataError("tolerance must be >= 0")
        if self.patience < 1:
            raise DataError("patience must be >= 1")
        if self.method not in ("prox", "subgradient"):
            raise DataError("method must be 'prox' or 'subgradient'")
        if self.normalization not in ("project", "rescale"):
            raise DataError("normalization must be 'project' or 'rescale'")


@dataclass(frozen=True)
class WeightVector:
    """Per-unit weights with provenance."""

    weights: np.ndarray
    method: str
    config: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise NumericalError(f"non-finite weights produced by {self.method}")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "config", dict(self.config))

    def __len__(self) -> int:
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)


def as_weights(w: WeightVector | np.ndarray | Sequence[float]) -> np.ndarray:
    if isinstance(w, WeightVector):
        return w.weights
    return np.asarray(w, dtype=float).reshape(-1)


def validate_dataset(
    rows: Iterable[Mapping[str, Any]] | Mapping[str, Any],
    feature_columns: Sequence[str] | None = None,
    outcome_column: str = "y",
    id_column: str | None = "unit_id",
) -> Dataset:
    """Build a :class:`Dataset` from raw rows.

    ``rows`` is either an iterable of row mappings (as produced by
    ``csv.DictReader``) or a mapping with ``features`` / ``outcomes`` (and
    optionally ``unit_ids``) entries. Feature columns default to every column
    that is neither the outcome nor the id column, in their original order.
    """
    if isinstance(rows, Mapping):
        if "features" not in rows or "outcomes" not in rows:
            raise DataError("mapping input needs 'features' and 'outcomes'")
        X = np.asarray(rows["features"], dtype=float)
        y = np.asarray(rows["outcomes"], dtype=float)
        if X.size == 0:
            raise DataError("empty input: no rows")
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        return Dataset(X, y, tuple(rows.get("unit_ids", ())))

    rows = list(rows)
    if not rows:
        raise DataError("empty input: no rows")
    header = list(rows[0].keys())
    if outcome_column not in header:
        raise DataError(f"missing outcome column {outcome_column!r}")
    if feature_columns is None:
        feature_columns = [c for c in header if c not in (outcome_column, id_column)]
    if not feature_columns:
        raise DataError("empty input: no feature columns")
    missing = [c for c in feature_columns if c not in header]
    if missing:
        raise DataError(f"missing feature columns {missing}")

    X = np.empty((len(rows), len(feature_columns)))
    y = np.empty(len(rows))
    ids = []
    for i, row in enumerate(rows):
        for j, col in enumerate(feature_columns):
            X[i, j] = _parse_cell(row.get(col), i, col)
        y[i] = _parse_cell(row.get(outcome_column), i, outcome_column)
        if id_column is not None and id_column in row:
            ids.append(row[id_column])
    return Dataset(X, y, tuple(ids))


def _parse_cell(value: Any, row: int, column: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise DataError(f"unparseable value {value!r} at row {row}, column {column!r}") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value at row {row}, column {column!r}")
    return v


def read_source_csv(
    path: str | Path,
    feature_columns: Sequence[str] | None = None,
    outcome_column: str = "y",
    id_column: str | None = "unit_id",
) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return validate_dataset(rows, feature_columns, outcome_column, id_column)


def read_target_csv(
    path: str | Path, feature_columns: Sequence[str] | None = None
) -> TargetSpec:
    """One data row is taken as the point; several rows form a target sample."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: target file has no rows")
    cols = list(feature_columns) if feature_columns is not None else [
        c for c in rows[0].keys() if c not in ("y", "unit_id")
    ]
    M = np.array([[_parse_cell(r.get(c), i, c) for c in cols] for i, r in enumerate(rows)])
    if M.shape[0] == 1:
        return TargetSpec(point=M[0])
    return TargetSpec(sample=M)


def write_source_csv(data: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", *(f"x{j + 1}" for j in range(data.d)), "y"])
        for uid, x, y in zip(data.unit_ids, data.features, data.outcomes):
            writer.writerow([uid, *(repr(float(v)) for v in x), repr(float(y))])


def write_target_csv(target: TargetSpec, path: str | Path) -> None:
    rows = target.sample if target.sample is not None else target.point.reshape(1, -1)
    if target.sample is not None and not np.allclose(target.sample.mean(axis=0), target.point):
        rows = target.point.reshape(1, -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(rows.shape[1])])
        for r in rows:
            writer.writerow([repr(float(v)) for v in r])


@dataclass(frozen=True)
class ScalingRecord:
    """Per-column affine map ``x -> (x - minimum) / span``."""

    minimum: np.ndarray
    span: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.minimum) / self.span

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.span + self.minimum


def minmax_scale(
    data: Dataset, target: TargetSpec
) -> tuple[Dataset, TargetSpec, ScalingRecord]:
    """Rescale every source column to [0, 1] and push the target through the same map.

    Constant columns map to 0 with a recorded span of 1 (a warning is emitted).
    Target coordinates are free to leave [0, 1].
    """
    target.check(data)
    lo = data.features.min(axis=0)
    span = data.features.max(axis=0) - lo
    constant = span == 0
    if np.any(constant):
        warnings.warn(
            f"constant feature columns {np.flatnonzero(constant).tolist()} mapped to 0",
            stacklevel=2,
        )
        span = np.where(constant, 1.0, span)
    record = ScalingRecord(_frozen(lo), _frozen(span))
    scaled = Dataset(record.transform(data.features), data.outcomes, data.unit_ids)
    sample = None if target.sample is None else record.transform(target.sample)
    return scaled, TargetSpec(point=record.transform(target.point), sample=sample), record


def add_intercept(data: Dataset, target: TargetSpec) -> tuple[Dataset, TargetSpec]:
    """Prepend a constant-1 feature to the source and the target.

    With the intercept column, exact balance forces ``sum(w) = 1`` even when
    the solver itself does not normalize.
    """
    target.check(data)
    X = np.column_stack([np.ones(data.n), data.features])
    sample = None
    if target.sample is not None:
        sample = np.column_stack([np.ones(target.sample.shape[0]), target.sample])
    point = np.concatenate([[1.0], target.point])
    return Dataset(X, data.outcomes, data.unit_ids), TargetSpec(point=point, sample=sample)
