"""Synthetic hull-violation scenarios and replication studies."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .data import DataError, Dataset, NumericalError, TargetSpec, WeightVector
from .diagnostics import DiagnosticsRecord, diagnose
from .seeding import derive_rng


# Default design seed. The 10-unit geometry is random, and whether the
# nonlinear outcome shows an interior best gamma depends on it; this seed
# gives a clear interior optimum at lambda = 0.1 on a 0.01-10 gamma grid.
REFERENCE_SEED = 11


class Kind(str, enum.Enum):
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


@dataclass(frozen=True)
class ScenarioSpec:
    kind: Kind = Kind.LINEAR
    n: int = 10
    d: int = 2
    beta: tuple[float, ...] | None = None
    noise_sd: float = 0.1
    hull_gap: float = 0.25
    seed: int = REFERENCE_SEED

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.d < 1:
            raise DataError("d must be >= 1")
        if self.n < self.d + 1:
            raise DataError(f"n={self.n} < d+1={self.d + 1}: hull would be degenerate")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be >= 0")
        if self.hull_gap < 0:
            raise DataError("hull_gap must be >= 0")
        if self.kind is Kind.NONLINEAR and self.d < 2:
            raise DataError("the nonlinear outcome needs d >= 2")
        if self.beta is None:
            object.__setattr__(self, "beta", (1.0,) * self.d)
        beta = tuple(float(b) for b in self.beta)
        if len(beta) != self.d:
            raise DataError(f"beta has length {len(beta)}, expected {self.d}")
        object.__setattr__(self, "beta", beta)

    def truth(self) -> Callable[[np.ndarray], np.ndarray | float]:
        if self.kind is Kind.LINEAR:
            beta = np.asarray(self.beta)
            return lambda x: np.asarray(x, dtype=float) @ beta
        return nonlinear_mean


def nonlinear_mean(x: np.ndarray) -> np.ndarray | float:
    """``2 x0^2 + x1 + x0 x1`` (extra coordinates are ignored)."""
    x = np.asarray(x, dtype=float)
    x0, x1 = x[..., 0], x[..., 1]
    return 2.0 * x0**2 + x1 + x0 * x1


class Scenario(NamedTuple):
    data: Dataset
    target: TargetSpec
    truth: Callable[[np.ndarray], np.ndarray | float]


# smallest displacement used when hull_gap == 0 so the target still leaves the hull
_MIN_GAP = 1e-6


def _outside_point(X: np.ndarray, gap: float) -> np.ndarray:
    centroid = X.mean(axis=0)
    if X.shape[1] == 1:
        lo, hi = X.min(), X.max()
        if hi - centroid[0] >= centroid[0] - lo:
            return np.array([hi + gap])
        return np.array([lo - gap])
    try:
        hull = ConvexHull(X)
    except QhullError as exc:
        raise NumericalError(f"degenerate feature sample: {exc}") from exc
    normals, offsets = hull.equations[:, :-1], hull.equations[:, -1]
    # facet hyperplane farthest from the sample centroid
    k = int(np.argmax(-(normals @ centroid + offsets)))
    facet_center = X[hull.simplices[k]].mean(axis=0)
    return facet_center + gap * normals[k]


def generate(spec: ScenarioSpec) -> Scenario:
    """Draw a fixed design on [0, 1]^d with a target outside its convex hull.

    ``x*`` sits ``hull_gap`` beyond the centre of the hull facet farthest from
    the sample centroid, along that facet's outward normal, so its distance to
    the hull equals ``hull_gap``.
    """
    rng = derive_rng(spec.seed, "dgp.design")
    X = rng.uniform(size=(spec.n, spec.d))
    xstar = _outside_point(X, max(spec.hull_gap, _MIN_GAP))
    truth = spec.truth()
    y = truth(X) + spec.noise_sd * derive_rng(spec.seed, "dgp.noise").standard_normal(spec.n)
    return Scenario(Dataset(X, y), TargetSpec(point=xstar), truth)


@dataclass(frozen=True)
class Replication:
    rows: list[dict] = field(default_factory=list)

    @property
    def squared_errors(self) -> np.ndarray:
        return np.array([r["sq_error"] for r in self.rows])

    @property
    def mse(self) -> float:
        return float(self.squared_errors.mean())

    @property
    def mc_se(self) -> float:
        """Monte-Carlo standard error of the MSE."""
        se = self.squared_errors
        if se.size < 2:
            return float("nan")
        return float(se.std(ddof=1) / np.sqrt(se.size))

    def summary(self) -> dict[str, float]:
        est = np.array([r["estimate"] for r in self.rows])
        return {
            "reps": len(self.rows),
            "mse": self.mse,
            "mc_se": self.mc_se,
            "mean_estimate": float(est.mean()),
            "truth": float(self.rows[0]["truth"]),
            "bias": float(est.mean() - self.rows[0]["truth"]),
        }


Estimator = Callable[[Dataset, TargetSpec], WeightVector]


def replicate(
    spec: ScenarioSpec,
    estimator: Estimator,
    reps: int,
    reuse_weights: bool = False,
) -> Replication:
    """Redraw the outcome noise ``reps`` times on the fixed design and score the estimator.

    ``reuse_weights=True`` calls the estimator once and reuses its weights for
    every replication; this is exact for linear smoothers, whose weights never
    look at the outcomes.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    base = generate(spec)
    X = base.data.features
    mu = base.truth(X)
    target_value = float(base.truth(base.target.point))
    rows = []
    w_fixed: np.ndarray | None = None
    diag: DiagnosticsRecord | None = None
    for r in range(reps):
        noise = derive_rng(spec.seed, "dgp.rep", r).standard_normal(spec.n)
        data = base.data.with_outcomes(mu + spec.noise_sd * noise)
        if w_fixed is None or not reuse_weights:
            try:
                w = np.asarray(estimator(data, base.target), dtype=float).reshape(-1)
            except Exception as exc:
                raise RuntimeError(f"estimator failed at replication {r}: {exc}") from exc
            if w_fixed is None or not np.array_equal(w, w_fixed):
                diag = diagnose(w, data, base.target)
            w_fixed = w
        estimate = float(w_fixed @ data.outcomes)
        rows.append(
            {
                "rep": r,
                "estimate": estimate,
                "truth": target_value,
                "sq_error": (estimate - target_value) ** 2,
                **diag.as_dict(),
            }
        )
    return Replication(rows)
