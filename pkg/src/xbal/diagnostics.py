"""Scalar weight diagnostics and convex-hull membership."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import nnls

from .data import Dataset, ImbalanceNorm, TargetSpec, WeightVector, as_weights

HULL_TOL = 1e-7


@dataclass(frozen=True)
class DiagnosticsRecord:
    negative_influence: float
    balance_rmse: float
    balance_linf: float
    balance_l2: float
    l2_norm: float
    ess: float
    in_hull: bool
    sum_weights: float

    def as_dict(self) -> dict:
        return asdict(self)


def negative_influence(w: WeightVector | np.ndarray) -> float:
    """Share of total absolute weight carried by negatively weighted units."""
    w = as_weights(w)
    total = np.abs(w).sum()
    if total == 0:
        raise ValueError("negative influence undefined for all-zero weights")
    return float(np.abs(w[w < 0]).sum() / total)


def _gap(w: np.ndarray, data: Dataset, target: TargetSpec) -> np.ndarray:
    target.check(data)
    if w.size != data.n:
        raise ValueError(f"dimension mismatch: {w.size} weights for {data.n} units")
    return data.features.T @ w - target.point


def balance(
    w: WeightVector | np.ndarray,
    data: Dataset,
    target: TargetSpec,
    p: ImbalanceNorm | str = ImbalanceNorm.L2,
) -> float:
    """Covariate imbalance between the weighted source and the target.

    ``l2`` gives the per-coordinate RMSE ``sqrt(||gap||^2 / d)``; ``linf`` the
    largest absolute coordinate gap.
    """
    gap = _gap(as_weights(w), data, target)
    if ImbalanceNorm(p) is ImbalanceNorm.L2:
        return float(np.sqrt(gap @ gap / gap.size))
    return float(np.max(np.abs(gap)))


def ess(w: WeightVector | np.ndarray) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    w = as_weights(w)
    if not np.any(w):
        raise ValueError("effective sample size undefined for all-zero weights")
    return float(w.sum() ** 2 / (w @ w))


def simplex_projection(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def simplex_balance(
    X: np.ndarray,
    point: np.ndarray,
    lam: float = 0.0,
    iters: int = 20000,
    tol: float = 1e-15,
) -> tuple[np.ndarray, float]:
    """Minimize ``||X'w - point||^2 + lam ||w||^2`` over the simplex.

    Accelerated projected gradient with adaptive restart. Returns the
    minimizer and the objective value.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    L = 2.0 * (np.linalg.norm(X, 2) ** 2 + lam)
    step = 1.0 / L if L > 0 else 1.0

    def f(w):
        r = X.T @ w - point
        return float(r @ r + lam * w @ w)

    w = np.full(n, 1.0 / n)
    y = w.copy()
    t = 1.0
    fw = f(w)
    for _ in range(iters):
        g = 2.0 * (X @ (X.T @ y - point)) + 2.0 * lam * y
        w_new = simplex_projection(y - step * g)
        f_new = f(w_new)
        if f_new > fw:
            # restart momentum
            y, t = w.copy(), 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        done = fw - f_new <= tol * max(1.0, fw) and np.abs(w_new - w).max() < 1e-12
        w, fw, t = w_new, f_new, t_new
        if done:
            break
    return w, fw


def hull_residual(data: Dataset, target: TargetSpec) -> tuple[float, np.ndarray]:
    """Distance-like residual of ``x*`` from the convex hull of the source rows.

    Solves ``min_{w >= 0} ||X'w - x*||^2 + (sum w - 1)^2`` by NNLS; the
    residual is zero exactly when ``x*`` lies in the hull.
    """
    target.check(data)
    A = np.vstack([data.features.T, np.ones(data.n)])
    b = np.append(target.point, 1.0)
    w, res = nnls(A, b, maxiter=50 * max(A.shape))
    return float(res), w


def in_convex_hull(data: Dataset, target: TargetSpec, tol: float = HULL_TOL) -> bool:
    if np.any(np.all(np.abs(data.features - target.point) <= tol, axis=1)):
        return True
    return hull_residual(data, target)[0] <= tol


def diagnose(
    w: WeightVector | np.ndarray, data: Dataset, target: TargetSpec
) -> DiagnosticsRecord:
    w = as_weights(w)
    gap = _gap(w, data, target)
    return DiagnosticsRecord(
        negative_influence=negative_influence(w),
        balance_rmse=float(np.sqrt(gap @ gap / gap.size)),
        balance_linf=float(np.max(np.abs(gap))),
        balance_l2=float(np.linalg.norm(gap)),
        l2_norm=float(np.linalg.norm(w)),
        ess=ess(w),
        in_hull=in_convex_hull(data, target),
        sum_weights=float(w.sum()),
    )
