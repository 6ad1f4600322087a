"""Penalized balancing weights.

Minimizes over ``w``::

    ||X'w - x*||_p^2  +  lam * ||w||_2^2  +  gamma * || (1[w_i < 0] |w_i| s_i)_i ||_q

with ``s_i = ||X_i||_2^alpha`` (or ``||X_i - x*||_2^alpha`` when the
penalty is centered). The first two terms are the usual imbalance /
dispersion trade-off; the third charges for negative weights in proportion
to how far the reflected unit sits from the origin. ``gamma = 0`` gives
unconstrained balancing weights; ``gamma -> inf`` approaches the
non-negativity constraint.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import (
    Dataset,
    ExtrapNorm,
    ImbalanceNorm,
    NumericalError,
    ProblemConfig,
    SolverConfig,
    TargetSpec,
    WeightVector,
    as_weights,
)

logger = logging.getLogger(__name__)

_BETA1 = 0.9
_BETA2 = 0.999
_EPS = 1e-8
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Objective value split into its three terms (b and c before scaling)."""

    imbalance_term: float
    dispersion_term: float
    extrapolation_term: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "total": self.total,
            "term_a": self.imbalance_term,
            "term_b": self.dispersion_term,
            "term_c": self.extrapolation_term,
        }


def penalty_scales(data: Dataset, target: TargetSpec, cfg: ProblemConfig) -> np.ndarray:
    """Per-unit multipliers ``s_i`` used by the extrapolation term."""
    X = data.features
    if cfg.centered_penalty:
        X = X - target.point
    return np.linalg.norm(X, axis=1) ** cfg.holder.alpha


def _check(w: np.ndarray, data: Dataset, target: TargetSpec) -> None:
    target.check(data)
    if w.size != data.n:
        raise ValueError(f"dimension mismatch: {w.size} weights for {data.n} units")


def _imbalance(r: np.ndarray, p: ImbalanceNorm) -> float:
    if p is ImbalanceNorm.L2:
        return float(r @ r)
    return float(np.max(np.abs(r)) ** 2)


def _extrapolation(u: np.ndarray, q: ExtrapNorm) -> float:
    if q is ExtrapNorm.L1:
        return float(u.sum())
    if q is ExtrapNorm.L2:
        return float(np.sqrt(u @ u))
    return float(u.max())


def objective(
    w: WeightVector | np.ndarray,
    data: Dataset,
    target: TargetSpec,
    cfg: ProblemConfig,
) -> ObjectiveBreakdown:
    w = as_weights(w)
    _check(w, data, target)
    r = data.features.T @ w - target.point
    u = np.maximum(-w, 0.0) * penalty_scales(data, target, cfg)
    a = _imbalance(r, cfg.p_imbalance)
    b = float(w @ w)
    c = _extrapolation(u, cfg.p_extrap)
    return ObjectiveBreakdown(a, b, c, a + cfg.lam * b + cfg.gamma * c)


def _argmax_share(v: np.ndarray) -> np.ndarray:
    # equal split over the maximizing coordinates
    top = v.max()
    hits = v >= top - _TIE_RTOL * abs(top)
    return hits / hits.sum()


def _imbalance_grad(X: np.ndarray, r: np.ndarray, p: ImbalanceNorm) -> np.ndarray:
    if p is ImbalanceNorm.L2:
        return 2.0 * (X @ r)
    ar = np.abs(r)
    top = ar.max()
    if top == 0.0:
        return np.zeros(X.shape[0])
    return 2.0 * top * (X @ (np.sign(r) * _argmax_share(ar)))


def _extrapolation_grad(w: np.ndarray, s: np.ndarray, q: ExtrapNorm) -> np.ndarray:
    neg = w < 0  # strict: the kink at w_i = 0 contributes 0
    u = np.where(neg, -w * s, 0.0)
    if q is ExtrapNorm.L1:
        return np.where(neg, -s, 0.0)
    if q is ExtrapNorm.L2:
        nu = np.sqrt(u @ u)
        if nu == 0.0:
            return np.zeros_like(w)
        return np.where(neg, -s * u / nu, 0.0)
    if u.max() <= 0.0:
        return np.zeros_like(w)
    return -s * _argmax_share(u) * neg


def subgradient(
    w: WeightVector | np.ndarray,
    data: Dataset,
    target: TargetSpec,
    cfg: ProblemConfig,
) -> np.ndarray:
    """An element of the subdifferential of the total objective at ``w``."""
    w = as_weights(w)
    _check(w, data, target)
    X = data.features
    r = X.T @ w - target.point
    g = _imbalance_grad(X, r, cfg.p_imbalance) + 2.0 * cfg.lam * w
    if cfg.gamma:
        g = g + cfg.gamma * _extrapolation_grad(w, penalty_scales(data, target, cfg), cfg.p_extrap)
    return g


@dataclass(frozen=True)
class ConvergenceTrace:
    """Objective history, one row per evaluated iterate (epoch 0 is the start)."""

    total: np.ndarray
    term_a: np.ndarray
    term_b: np.ndarray
    term_c: np.ndarray
    best_epoch: int
    stopped_early: bool

    @property
    def epochs_run(self) -> int:
        return self.total.size - 1

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["epoch", "total", "term_a", "term_b", "term_c"])
            for k in range(self.total.size):
                out.writerow(
                    [k]
                    + [format(float(col[k]), ".17g") for col in (self.total, self.term_a, self.term_b, self.term_c)]
                )


class SolveResult(NamedTuple):
    weights: WeightVector
    breakdown: ObjectiveBreakdown
    trace: ConvergenceTrace


def prox_negative_part(y: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Prox of ``w -> sum k_i max(-w_i, 0)`` (unit metric, per-coordinate ``k``)."""
    return np.where(y >= 0.0, y, np.minimum(y + k, 0.0))


def prox_negative_part_sum_one(z: np.ndarray, eta: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Minimize ``sum (w_i - z_i)^2 / (2 eta_i) + sum k_i/eta_i max(-w_i, 0)`` s.t. ``sum w = 1``.

    The solution is ``prox(z - eta * nu)`` for the scalar multiplier ``nu``
    at which the coordinates sum to one. That sum is piecewise linear and
    non-increasing in ``nu``; it is located exactly by a sorted sweep over
    the breakpoints.
    """
    hi = (z + k) / eta
    finite = np.isfinite(hi)
    points = np.concatenate([z / eta, hi[finite]])
    dslope = np.concatenate([eta, -eta[finite]])
    order = np.argsort(points, kind="stable")
    points, dslope = points[order], dslope[order]

    def total(nu: float) -> float:
        return float(prox_negative_part(z - eta * nu, k).sum())

    s0 = total(points[0])
    if s0 <= 1.0:
        nu = points[0] - (1.0 - s0) / eta.sum()
        return prox_negative_part(z - eta * nu, k)
    # slope on the interval to the right of each breakpoint
    slopes = -eta.sum() + np.cumsum(dslope)
    values = s0 + np.concatenate([[0.0], np.cumsum(slopes[:-1] * np.diff(points))])
    below = np.flatnonzero(values <= 1.0)
    t = (below[0] if below.size else points.size) - 1
    nu = points[t] + (values[t] - 1.0) / -slopes[t]
    return prox_negative_part(z - eta * nu, k)


def solve(
    data: Dataset,
    target: TargetSpec,
    cfg: ProblemConfig,
    scfg: SolverConfig | None = None,
) -> SolveResult:
    """Minimize the penalized objective with Adam from uniform weights.

    The smooth terms drive Adam. With the default ``method="prox"`` and an
    L1 extrapolation norm the penalty is applied through its proximal map
    using Adam's per-coordinate step sizes, which keeps huge ``gamma`` values
    from swamping the second-moment estimate. When
    ``cfg.normalize_sum_to_one`` holds the constraint ``sum(w) = 1`` is
    enforced in the same step (or, with ``normalization="rescale"``, by
    dividing by the sum afterwards). The lowest-objective iterate is returned.
    """
    scfg = scfg or SolverConfig()
    target.check(data)
    X = data.features
    xs = target.point
    n = data.n
    s = penalty_scales(data, target, cfg)
    lam, gamma = cfg.lam, cfg.gamma
    p, q = cfg.p_imbalance, cfg.p_extrap
    lr, window = scfg.learning_rate, scfg.patience
    use_prox = scfg.method == "prox" and q is ExtrapNorm.L1 and gamma > 0
    project = cfg.normalize_sum_to_one and scfg.normalization == "project"
    rescale = cfg.normalize_sum_to_one and scfg.normalization == "rescale"
    zero_k = np.zeros(n)

    def evaluate(w: np.ndarray) -> tuple[float, float, float, np.ndarray]:
        r = X.T @ w - xs
        u = np.maximum(-w, 0.0) * s
        return _imbalance(r, p), float(w @ w), _extrapolation(u, q), r

    w = np.full(n, 1.0 / n)
    m = np.zeros(n)
    v = np.zeros(n)
    a, b, c, r = evaluate(w)
    hist = [(a, b, c)]
    totals = [a + lam * b + gamma * c]
    best, best_w, best_epoch = totals[0], w.copy(), 0
    best_hist = [best]
    stopped = False
    warned = False
    b1t = b2t = 1.0

    for epoch in range(1, scfg.epochs + 1):
        g = _imbalance_grad(X, r, p) + 2.0 * lam * w
        if gamma and not use_prox:
            g += gamma * _extrapolation_grad(w, s, q)
        m = _BETA1 * m + (1.0 - _BETA1) * g
        v = _BETA2 * v + (1.0 - _BETA2) * g * g
        b1t *= _BETA1
        b2t *= _BETA2
        eta = lr / (np.sqrt(v / (1.0 - b2t)) + _EPS)
        z = w - eta * (m / (1.0 - b1t))
        k = eta * gamma * s if use_prox else zero_k
        if project:
            w = prox_negative_part_sum_one(z, eta, k)
        elif use_prox:
            w = prox_negative_part(z, k)
        else:
            w = z
        if rescale:
            total_w = w.sum()
            if abs(total_w) > 1e-8:
                w = w / total_w
            elif not warned:
                warnings.warn(
                    f"weight sum {total_w:.3g} near zero at epoch {epoch}; normalization skipped",
                    RuntimeWarning,
                    stacklevel=2,
                )
                warned = True
        a, b, c, r = evaluate(w)
        f = a + lam * b + gamma * c
        if not np.isfinite(f):
            raise NumericalError(f"non-finite objective at epoch {epoch}")
        hist.append((a, b, c))
        totals.append(f)
        if f < best:
            best, best_w, best_epoch = f, w.copy(), epoch
        best_hist.append(best)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("epoch %d objective %.12g", epoch, f)
        if epoch >= window and best_hist[-window - 1] - best < scfg.tolerance:
            stopped = True
            break

    terms = np.array(hist)
    trace = ConvergenceTrace(
        total=np.array(totals),
        term_a=terms[:, 0],
        term_b=terms[:, 1],
        term_c=terms[:, 2],
        best_epoch=best_epoch,
        stopped_early=stopped,
    )
    weights = WeightVector(best_w, "solver", {**cfg.to_dict(), **_solver_dict(scfg)})
    return SolveResult(weights, objective(best_w, data, target, cfg), trace)


def _solver_dict(scfg: SolverConfig) -> dict[str, float | str]:
    return {
        "method": scfg.method,
        "normalization": scfg.normalization,
        "learning_rate": scfg.learning_rate,
        "epochs": scfg.epochs,
        "tolerance": scfg.tolerance,
        "patience": scfg.patience,
        "seed": scfg.seed,
    }


def ridge_hat_solve(X: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(X'X + lam I) z = rhs``; raises NumericalError when singular."""
    d = X.shape[1]
    G = X.T @ X + lam * np.eye(d)
    if lam == 0 and np.linalg.matrix_rank(X) < d:
        raise NumericalError("X'X is singular (rank-deficient design); use lambda > 0")
    try:
        return np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular system: {exc}; use lambda > 0") from exc


def solve_closed_form_ridge_path(
    data: Dataset, target: TargetSpec, lam: float
) -> WeightVector:
    """Ridge implied weights ``w_i = x*' (X'X + lam I)^{-1} X_i``.

    These minimize the objective when ``gamma = 0``, the imbalance norm is L2
    and no normalization is applied.
    """
    target.check(data)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    z = ridge_hat_solve(data.features, target.point, lam)
    return WeightVector(data.features @ z, "ridge", {"lambda": lam})
