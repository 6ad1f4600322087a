"""Hölder-continuity error bounds for signed-weight estimators.

Three variants are provided:

* ``worst_case_bound``: reflected imbalance + nonlinearity + noise, assuming
  ``mu(0) = 0``. The imbalance part uses ``a * ||X'w - x*||`` as a computable
  surrogate for the unknown first term; it is a guarantee only when
  ``alpha = 1`` and ``sum |w| = 1``, otherwise a diagnostic.
* ``prop1_bound``: needs the even part of the regression function.
* ``prop2_bound``: fully empirical, pairing each unit with its reflection
  ``-X_i`` (exact match) or the nearest neighbour of ``-X_i``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .data import Dataset, HolderParams, TargetSpec, WeightVector, as_weights

PAIR_TOL = 1e-9


class Variant(str, enum.Enum):
    WORST_CASE = "worst"
    PROP1 = "prop1"
    PROP2 = "prop2"


@dataclass(frozen=True)
class BoundReport:
    imbalance_component: float
    nonlinearity_component: float
    noise_component: float
    total: float
    variant: Variant
    delta: float
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        flat = {
            "variant": self.variant.value,
            "delta": self.delta,
            "imbalance_component": self.imbalance_component,
            "nonlinearity_component": self.nonlinearity_component,
            "noise_component": self.noise_component,
            "total": self.total,
        }
        for k, v in self.details.items():
            flat[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return flat

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=False)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text


def _report(imb, nonlin, noise, variant, delta, details) -> BoundReport:
    imb, nonlin, noise = float(imb), float(nonlin), float(noise)
    return BoundReport(imb, nonlin, noise, imb + nonlin + noise, variant, delta, details)


def _prep(w, data: Dataset, target: TargetSpec) -> np.ndarray:
    w = as_weights(w)
    target.check(data)
    if w.size != data.n:
        raise ValueError(f"dimension mismatch: {w.size} weights for {data.n} units")
    return w


def reflect(data: Dataset, w: WeightVector | np.ndarray) -> np.ndarray:
    """Flip the rows that carry negative weight, so ``w_i X_i == |w_i| X_i``‡."""
    w = as_weights(w)
    if w.size != data.n:
        raise ValueError(f"dimension mismatch: {w.size} weights for {data.n} units")
    return np.where((w < 0)[:, None], -data.features, data.features)


def noise_radius(sigma: float, w: np.ndarray, log_arg: float) -> float:
    return sigma * float(np.linalg.norm(w)) * math.sqrt(2.0 * math.log(log_arg))


def _negative_weight_term(w, X, center, holder: HolderParams) -> float:
    dist = np.linalg.norm(X - center, axis=1) ** holder.alpha
    return 2.0 * holder.a * float(np.sum(np.abs(w) * (w < 0) * dist))


def worst_case_bound(
    w: WeightVector | np.ndarray,
    data: Dataset,
    target: TargetSpec,
    holder: HolderParams,
) -> BoundReport:
    w = _prep(w, data, target)
    X = data.features
    reflected_gap = np.abs(w) @ reflect(data, w) - target.point
    imbalance = holder.a * float(np.linalg.norm(reflected_gap))
    nonlin = _negative_weight_term(w, X, 0.0, holder)
    noise = noise_radius(holder.sigma, w, 2.0 / holder.delta)
    details = {
        "reflected_imbalance_norm": float(np.linalg.norm(reflected_gap)),
        "imbalance_is_surrogate": True,
        "surrogate_guaranteed": bool(holder.alpha == 1.0 and abs(np.abs(w).sum() - 1.0) <= 1e-12),
        "assumes_mu_zero_at_origin": True,
    }
    return _report(imbalance, nonlin, noise, Variant.WORST_CASE, holder.delta, details)


def prop1_bound(
    w: WeightVector | np.ndarray,
    data: Dataset,
    target: TargetSpec,
    holder: HolderParams,
    mu_even_oracle: Callable[[np.ndarray], float],
) -> BoundReport:
    """Bound using the even part ``mu_e(x) = (mu(x) + mu(-x)) / 2``.

    The even-part bias is reported as ``|sum w_i (mu_e(X_i) - mu_e(x*))|``
    plus the negative-weight Hölder term (both kept non-negative).
    """
    w = _prep(w, data, target)
    X = data.features
    me_x = np.array([float(mu_even_oracle(x)) for x in X])
    me_t = float(mu_even_oracle(target.point))
    even_sum = float(w @ (me_x - me_t))
    neg = _negative_weight_term(w, X, target.point, holder)
    noise = noise_radius(holder.sigma, w, 2.0 / holder.delta)
    details = {
        "even_part_sum": even_sum,
        "negative_weight_term": neg,
        "b_even": abs(even_sum) + neg,
        "b_even_single_abs": abs(even_sum + neg),
        "mu_even_target": me_t,
    }
    return _report(abs(even_sum), neg, noise, Variant.PROP1, holder.delta, details)


@dataclass(frozen=True)
class ReflectionPairing:
    """Units whose reflection ``-X_i`` is observed, and nearest neighbours for the rest.

    ``mirror_map`` sends each paired unit to the lowest index ``j`` with
    ``X_j == -X_i``; ``nn_map`` sends the others to ``argmin_{j != i}
    ||X_j + X_i||`` (lowest index on ties).
    """

    paired_indices: tuple[int, ...]
    nn_indices: tuple[int, ...]
    mirror_map: dict[int, int]
    nn_map: dict[int, int]
    nn_distances: dict[int, float]

    def partner(self, i: int) -> int:
        return self.mirror_map[i] if i in self.mirror_map else self.nn_map[i]

    def partner_distance(self, i: int) -> float:
        return self.nn_distances.get(i, 0.0)


def build_pairing(data: Dataset, tol: float = PAIR_TOL) -> ReflectionPairing:
    if data.n < 2:
        raise ValueError("pairing needs at least two units")
    X = data.features
    # D[i, j] = || X_j - (-X_i) ||
    D = np.linalg.norm(X[None, :, :] + X[:, None, :], axis=2)
    paired, nn = [], []
    mirror, nn_map, nn_dist = {}, {}, {}
    for i in range(data.n):
        hits = np.flatnonzero(D[i] <= tol)
        if hits.size:
            paired.append(i)
            mirror[i] = int(hits[0])
            continue
        row = D[i].copy()
        row[i] = np.inf
        j = int(np.argmin(row))
        nn.append(i)
        nn_map[i] = j
        nn_dist[i] = float(row[j])
    return ReflectionPairing(tuple(paired), tuple(nn), mirror, nn_map, nn_dist)


def prop2_bound(
    w: WeightVector | np.ndarray,
    data: Dataset,
    target: TargetSpec,
    holder: HolderParams,
    pairing: ReflectionPairing | None = None,
) -> BoundReport:
    """Empirical bound from observed outcomes and reflection pairing.

    The unknown ``mu_e(x*)`` is replaced by its upper bound built from the
    unit closest to ``x*``; it enters with whichever sign enlarges the
    absolute value, i.e. ``|S| + bound * |sum w|``.
    """
    w = _prep(w, data, target)
    pairing = pairing or build_pairing(data)
    X, Y = data.features, data.outcomes
    a, alpha, sigma = holder.a, holder.alpha, holder.sigma
    L = math.sqrt(2.0 * math.log(6.0 / holder.delta))

    P = list(pairing.paired_indices)
    N = list(pairing.nn_indices)
    partner = np.array([pairing.partner(i) for i in range(data.n)], dtype=int)
    half_sums = (Y + Y[partner]) / 2.0
    paired_sum = float(w[P] @ half_sums[P]) if P else 0.0
    nn_sum = float(w[N] @ half_sums[N]) if N else 0.0
    even_sum = paired_sum + nn_sum

    j = int(np.argmin(np.linalg.norm(X - target.point, axis=1)))
    jp = int(partner[j])
    mu_e_bound = (
        abs((Y[j] + Y[jp]) / 2.0)
        + sigma * L
        + a * float(np.linalg.norm(X[jp] + X[j])) ** alpha
        + a * float(np.linalg.norm(X[j] - target.point)) ** alpha
    )
    weight_sum = float(w.sum())
    term_even = abs(even_sum) + mu_e_bound * abs(weight_sum)

    nn_dist = np.array([pairing.nn_distances[i] for i in N])
    term_nn = a * float(np.sum(np.abs(w[N]) * nn_dist**alpha)) if N else 0.0
    term_neg = _negative_weight_term(w, X, target.point, holder)

    noise_main = sigma * float(np.linalg.norm(w)) * L
    noise_pairs = sigma / math.sqrt(2.0) * (
        float(np.linalg.norm(w[P])) + float(np.linalg.norm(w[N]))
    ) * L

    details = {
        "n_paired": len(P),
        "n_nn": len(N),
        "paired_even_sum": paired_sum,
        "nn_even_sum": nn_sum,
        "closest_unit": j,
        "closest_unit_partner": jp,
        "mu_even_target_bound": mu_e_bound,
        "weight_sum": weight_sum,
        "even_part_term": term_even,
        "nn_holder_slack": term_nn,
        "negative_weight_term": term_neg,
        "noise_full": noise_main,
        "noise_pairs": noise_pairs,
        "nn_distances": nn_dist.tolist(),
    }
    return _report(term_even, term_nn + term_neg, noise_main + noise_pairs, Variant.PROP2, holder.delta, details)


def estimate_sigma(data: Dataset, lam: float = 1e-6) -> float:
    """Plug-in noise scale: residual standard deviation of a ridge fit.

    Using it voids the formal coverage guarantee of the bounds.
    """
    X, y = data.features, data.outcomes
    beta = np.linalg.solve(X.T @ X + lam * np.eye(data.d), X.T @ y)
    resid = y - X @ beta
    dof = max(data.n - data.d, 1)
    return float(np.sqrt(resid @ resid / dof))


def compute_bound(
    variant: Variant | str,
    w: WeightVector | np.ndarray,
    data: Dataset,
    target: TargetSpec,
    holder: HolderParams,
    mu_even_oracle: Callable[[np.ndarray], float] | None = None,
) -> BoundReport:
    variant = Variant(variant)
    if variant is Variant.WORST_CASE:
        return worst_case_bound(w, data, target, holder)
    if variant is Variant.PROP1:
        if mu_even_oracle is None:
            raise ValueError("prop1 bound needs an even-part oracle")
        return prop1_bound(w, data, target, holder, mu_even_oracle)
    return prop2_bound(w, data, target, holder)
