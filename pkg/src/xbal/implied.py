"""Implied weights of common estimators: IPW, (ridge) regression, augmented / doubly robust."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .data import (
    DataError,
    Dataset,
    NumericalError,
    TargetSpec,
    WeightVector,
    as_weights,
)
from .solver import ridge_hat_solve, solve_closed_form_ridge_path

CLIP = 1e-6
MAX_IRLS_ITER = 100
GRAD_TOL = 1e-8
JITTER = 1e-8


@dataclass(frozen=True)
class PropensityModel:
    """Logistic membership model; ``coefficients[0]`` is the intercept."""

    coefficients: np.ndarray
    converged: bool
    iterations: int
    positive: str = "source"

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return expit(self.coefficients[0] + X @ self.coefficients[1:])


def fit_propensity(
    source: Dataset,
    target_sample: np.ndarray,
    positive: str = "source",
) -> PropensityModel:
    """Fit ``P(membership | x)`` by IRLS on the stacked source/target design.

    With ``positive="source"`` source rows carry label 1 and target rows label
    0; ``positive="target"`` flips the labels so that the fitted odds estimate
    the density ratio toward the target.
    """
    T = np.atleast_2d(np.asarray(target_sample, dtype=float))
    if T.shape[0] < 1:
        raise DataError("target sample is empty")
    if T.shape[1] != source.d:
        raise DataError(f"dimension mismatch: target sample has {T.shape[1]} columns, source {source.d}")
    if positive not in ("source", "target"):
        raise ValueError("positive must be 'source' or 'target'")
    X = np.vstack([source.features, T])
    y = np.concatenate([np.ones(source.n), np.zeros(T.shape[0])])
    if positive == "target":
        y = 1.0 - y
    Z = np.column_stack([np.ones(X.shape[0]), X])
    beta = np.zeros(Z.shape[1])
    jitter = JITTER * np.eye(Z.shape[1])
    for it in range(1, MAX_IRLS_ITER + 1):
        p = expit(Z @ beta)
        grad = Z.T @ (y - p)
        if np.max(np.abs(grad)) <= GRAD_TOL:
            break
        W = p * (1.0 - p)
        H = Z.T @ (Z * W[:, None]) + jitter
        try:
            beta = beta + np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"IRLS normal equations singular: {exc}") from exc
        if not np.all(np.isfinite(beta)):
            raise NumericalError("IRLS diverged (perfect separation?); regularize or drop features")
    else:
        p = expit(Z @ beta)
        grad = Z.T @ (y - p)
        if np.max(np.abs(grad)) > GRAD_TOL:
            raise NumericalError(
                f"IRLS did not converge in {MAX_IRLS_ITER} iterations; "
                "the classes are likely perfectly separated, consider regularization"
            )
    # a divergent MLE drives every fitted probability to its label
    if np.max(np.abs(y - p)) < 1e-6:
        raise NumericalError(
            "perfect separation between source and target; the logistic MLE does not "
            "exist, consider regularization or coarser features"
        )
    return PropensityModel(beta, True, it, positive)


def ipw_att_weights(
    model: PropensityModel, source: Dataset, normalize: bool = True
) -> WeightVector:
    """Odds weights ``e(x) / (1 - e(x))`` with ``e`` clipped to ``[1e-6, 1 - 1e-6]``."""
    e = model.predict(source.features)
    clipped = np.flatnonzero((e < CLIP) | (e > 1.0 - CLIP))
    e = np.clip(e, CLIP, 1.0 - CLIP)
    w = e / (1.0 - e)
    if normalize:
        w = w / w.sum()
    return WeightVector(
        w,
        "ipw",
        {
            "normalize": normalize,
            "positive": model.positive,
            "clipped_units": [source.unit_ids[i] for i in clipped],
        },
    )


def ipw_transport_weights(
    source: Dataset, target: TargetSpec, normalize: bool = True
) -> WeightVector:
    """IPW baseline toward the target sample (odds of target membership)."""
    if target.sample is None:
        raise DataError("IPW needs a target sample, not just a target point")
    return ipw_att_weights(fit_propensity(source, target.sample, positive="target"), source, normalize)


Smoother = Callable[[np.ndarray], np.ndarray]


def ridge_smoother(data: Dataset, lam: float) -> Smoother:
    """``x -> X (X'X + lam I)^{-1} x``: ridge prediction weights at ``x``."""
    X = data.features

    def omega(x: np.ndarray) -> np.ndarray:
        return X @ ridge_hat_solve(X, np.asarray(x, dtype=float), lam)

    return omega


def augmented_weights(
    w0: WeightVector | np.ndarray,
    smoother_weights: Smoother,
    data: Dataset,
    target: TargetSpec,
) -> WeightVector:
    """Combine initial weights with an outcome-model smoother.

    ``w_i = w0_i + omega_i(x*) - sum_j w0_j omega_i(X_j)``.
    """
    w0 = as_weights(w0)
    target.check(data)
    if w0.size != data.n:
        raise ValueError(f"dimension mismatch: {w0.size} weights for {data.n} units")
    at_target = np.asarray(smoother_weights(target.point), dtype=float)
    Omega = np.array([smoother_weights(x) for x in data.features], dtype=float)
    if at_target.shape != (data.n,) or Omega.shape != (data.n, data.n):
        raise ValueError("smoother must return one weight per source unit")
    return WeightVector(w0 + at_target - w0 @ Omega, "augmented")


def dr_ridge_weights(
    w0: WeightVector | np.ndarray,
    data: Dataset,
    target: TargetSpec,
    lam: float,
) -> WeightVector:
    """Doubly robust weights with a ridge outcome model (closed form)."""
    w0 = as_weights(w0)
    target.check(data)
    if w0.size != data.n:
        raise ValueError(f"dimension mismatch: {w0.size} weights for {data.n} units")
    X = data.features
    residual = target.point - X.T @ w0
    return WeightVector(w0 + X @ ridge_hat_solve(X, residual, lam), "dr-ridge", {"lambda": lam})


def ols_weights(data: Dataset, target: TargetSpec) -> WeightVector:
    w = solve_closed_form_ridge_path(data, target, 0.0)
    return WeightVector(w.weights, "ols", {"lambda": 0.0})


def point_estimate(w: WeightVector | np.ndarray, outcomes: np.ndarray) -> float:
    w = as_weights(w)
    y = np.asarray(outcomes, dtype=float).reshape(-1)
    if w.size != y.size:
        raise ValueError(f"length mismatch: {w.size} weights, {y.size} outcomes")
    return float(w @ y)
