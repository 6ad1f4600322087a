"""(gamma, lambda) sensitivity sweeps with CSV and SVG output."""

from __future__ import annotations

import csv
import math
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .bounds import BoundReport, Variant, compute_bound
from .data import DataError, Dataset, ProblemConfig, SolverConfig, TargetSpec, WeightVector
from .diagnostics import DiagnosticsRecord, diagnose
from .implied import ipw_transport_weights, ols_weights
from .solver import ObjectiveBreakdown, objective, solve, solve_closed_form_ridge_path

BASELINES = ("ols", "ridge", "ipw")

CSV_COLUMNS = (
    "gamma",
    "lambda",
    "estimate",
    "term_a",
    "term_b",
    "term_c",
    "neg_influence",
    "balance_rmse",
    "l2_norm",
    "ess",
    "converged",
    "method",
    "mse",
)


@dataclass(frozen=True)
class MSEOracle:
    """Known outcome means, giving each weight vector's conditional MSE.

    ``mse(w) = (w . mean_source - mean_target)**2 + noise_sd**2 * ||w||**2``,
    the error of ``w . Y`` averaged over outcome noise with the design fixed.
    """

    mean_source: np.ndarray
    mean_target: float
    noise_sd: float

    def mse(self, w: np.ndarray) -> float:
        bias = float(w @ np.asarray(self.mean_source, dtype=float)) - float(self.mean_target)
        return bias * bias + self.noise_sd**2 * float(w @ w)


def _strictly_sorted(values: Sequence[float], name: str, positive: bool) -> tuple[float, ...]:
    vals = tuple(float(v) for v in values)
    if not vals:
        raise DataError(f"{name} grid is empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise DataError(f"{name} grid must be strictly increasing")
    if positive and vals[0] <= 0:
        raise DataError(f"{name} grid must be positive")
    if not positive and vals[0] < 0:
        raise DataError(f"{name} grid must be non-negative")
    return vals


def log_grid(lo: float, hi: float, k: int) -> tuple[float, ...]:
    if k == 1:
        return (float(lo),)
    return tuple(float(v) for v in np.logspace(math.log10(lo), math.log10(hi), k))


@dataclass(frozen=True)
class SweepGrid:
    gammas: tuple[float, ...]
    lambdas: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    base_config: ProblemConfig = field(default_factory=ProblemConfig)
    baselines: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "gammas", _strictly_sorted(self.gammas, "gamma", True))
        object.__setattr__(self, "lambdas", _strictly_sorted(self.lambdas, "lambda", False))
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise DataError(f"unknown baselines {sorted(unknown)}")
        object.__setattr__(self, "baselines", frozenset(self.baselines))


@dataclass(frozen=True)
class SweepCell:
    gamma: float
    lam: float
    weights: np.ndarray | None
    estimate: float
    breakdown: ObjectiveBreakdown | None
    diagnostics: DiagnosticsRecord | None
    bound: BoundReport | None
    converged: bool
    error: str = ""
    mse: float | None = None


@dataclass(frozen=True)
class BaselineRow:
    method: str
    lam: float | None
    weights: np.ndarray | None
    estimate: float
    breakdown: ObjectiveBreakdown | None
    diagnostics: DiagnosticsRecord | None
    error: str = ""
    mse: float | None = None


@dataclass(frozen=True)
class SweepResult:
    gammas: tuple[float, ...]
    lambdas: tuple[float, ...]
    cells: list[SweepCell]
    baseline_rows: list[BaselineRow]

    def cell(self, gamma_index: int, lambda_index: int) -> SweepCell:
        return self.cells[gamma_index * len(self.lambdas) + lambda_index]

    def column(self, lambda_index: int, attr: Callable[[SweepCell], float]) -> np.ndarray:
        """Values along the gamma axis for one lambda."""
        return np.array([attr(self.cell(g, lambda_index)) for g in range(len(self.gammas))])


def _solve_cell(args) -> SweepCell:
    data, target, cfg, scfg, outcomes, bound, oracle = args
    try:
        res = solve(data, target, cfg, scfg)
        w = res.weights.weights
        estimate = float(w @ outcomes)
        report = compute_bound(bound, w, data, target, cfg.holder) if bound else None
        return SweepCell(
            cfg.gamma,
            cfg.lam,
            w,
            estimate,
            res.breakdown,
            diagnose(w, data, target),
            report,
            True,
            mse=None if oracle is None else oracle.mse(w),
        )
    except Exception as exc:  # a failed cell must not abort the sweep
        return SweepCell(cfg.gamma, cfg.lam, None, math.nan, None, None, None, False, f"{type(exc).__name__}: {exc}")


def _baseline(name: str, data: Dataset, target: TargetSpec, cfg: ProblemConfig, outcomes, oracle) -> BaselineRow:
    lam = None
    try:
        if name == "ols":
            wv: WeightVector = ols_weights(data, target)
        elif name == "ridge":
            lam = cfg.lam
            wv = solve_closed_form_ridge_path(data, target, lam)
        else:
            wv = ipw_transport_weights(data, target, normalize=True)
        w = wv.weights
        estimate = float(w @ outcomes)
        return BaselineRow(
            name,
            lam,
            w,
            estimate,
            objective(w, data, target, cfg),
            diagnose(w, data, target),
            mse=None if oracle is None else oracle.mse(w),
        )
    except Exception as exc:
        return BaselineRow(name, lam, None, math.nan, None, None, f"{type(exc).__name__}: {exc}")


def run_sweep(
    data: Dataset,
    target: TargetSpec,
    grid: SweepGrid,
    scfg: SolverConfig | None = None,
    outcomes: np.ndarray | None = None,
    bound: Variant | str | None = None,
    oracle: MSEOracle | None = None,
    workers: int = 1,
) -> SweepResult:
    """Solve every (gamma, lambda) cell from a fresh uniform start.

    Cells are ordered by gamma index, then lambda index, whatever the
    number of workers. With an ``oracle`` (known outcome means, as in
    simulations) each cell also records its conditional MSE.
    """
    scfg = scfg or SolverConfig()
    target.check(data)
    y = data.outcomes if outcomes is None else np.asarray(outcomes, dtype=float)
    if y.size != data.n:
        raise DataError(f"{y.size} outcomes for {data.n} units")
    bound = Variant(bound) if bound else None
    jobs = [
        (data, target, grid.base_config.with_(gamma=g, lam=lam), scfg, y, bound, oracle)
        for g in grid.gammas
        for lam in grid.lambdas
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_solve_cell, jobs))
    else:
        cells = [_solve_cell(j) for j in jobs]
    baselines = [
        _baseline(name, data, target, grid.base_config, y, oracle)
        for name in BASELINES
        if name in grid.baselines
    ]
    return SweepResult(grid.gammas, grid.lambdas, cells, baselines)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return format(float(x), ".17g")


def _csv_rows(result: SweepResult) -> Iterable[list[str]]:
    for c in result.cells:
        b, d = c.breakdown, c.diagnostics
        yield [
            _fmt(c.gamma),
            _fmt(c.lam),
            _fmt(c.estimate),
            _fmt(b and b.imbalance_term),
            _fmt(b and b.dispersion_term),
            _fmt(b and b.extrapolation_term),
            _fmt(d and d.negative_influence),
            _fmt(d and d.balance_rmse),
            _fmt(d and d.l2_norm),
            _fmt(d and d.ess),
            _fmt(c.converged),
            "solver",
            _fmt(c.mse),
        ]
    for r in result.baseline_rows:
        b, d = r.breakdown, r.diagnostics
        yield [
            "",
            _fmt(r.lam),
            _fmt(r.estimate),
            _fmt(b and b.imbalance_term),
            _fmt(b and b.dispersion_term),
            _fmt(b and b.extrapolation_term),
            _fmt(d and d.negative_influence),
            _fmt(d and d.balance_rmse),
            _fmt(d and d.l2_norm),
            _fmt(d and d.ess),
            _fmt(not r.error),
            r.method,
            _fmt(r.mse),
        ]


def emit_csv(result: SweepResult, path: str | Path) -> None:
    """One row per cell (gamma-major), then one row per baseline."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_COLUMNS)
        out.writerows(_csv_rows(result))


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


SVG_KINDS = {
    "estimate": ("estimate", lambda c: c.estimate, lambda r: r.estimate),
    "balance": ("balance RMSE", lambda c: c.diagnostics.balance_rmse, lambda r: r.diagnostics.balance_rmse),
    "neg_influence": (
        "negative influence",
        lambda c: c.diagnostics.negative_influence,
        lambda r: r.diagnostics.negative_influence,
    ),
    "norm": ("L2 norm of weights", lambda c: c.diagnostics.l2_norm, lambda r: r.diagnostics.l2_norm),
}

_PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 150, 30, 50


def emit_svg(result: SweepResult, kind: str, path: str | Path) -> None:
    """Line chart of one cell quantity against log10(gamma), one polyline per lambda.

    Baselines are horizontal reference lines: dashed for regression
    (OLS / ridge), dotted for IPW.
    """
    if kind not in SVG_KINDS:
        raise ValueError(f"unknown chart kind {kind!r}; choose from {sorted(SVG_KINDS)}")
    if not result.cells:
        raise ValueError("empty sweep result")
    label, cell_value, base_value = SVG_KINDS[kind]

    def safe(fn, obj):
        try:
            v = float(fn(obj))
        except (AttributeError, TypeError):
            return math.nan
        return v

    xs = [math.log10(g) for g in result.gammas]
    series = [
        [safe(cell_value, result.cell(gi, li)) for gi in range(len(result.gammas))]
        for li in range(len(result.lambdas))
    ]
    refs = [(r.method, safe(base_value, r)) for r in result.baseline_rows]
    finite = [v for s in series for v in s if math.isfinite(v)] + [v for _, v in refs if math.isfinite(v)]
    ylo, yhi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    xlo, xhi = (xs[0], xs[-1]) if len(xs) > 1 else (xs[0] - 0.5, xs[0] + 0.5)
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(x):
        return _ML + (x - xlo) / (xhi - xlo) * pw

    def py(y):
        return _MT + (1.0 - (y - ylo) / (yhi - ylo)) * ph

    svg = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "version": "1.1",
            "width": str(_W),
            "height": str(_H),
            "viewBox": f"0 0 {_W} {_H}",
        },
    )
    ET.SubElement(svg, "title").text = f"{label} vs log10(gamma)"
    ET.SubElement(svg, "rect", {"x": "0", "y": "0", "width": str(_W), "height": str(_H), "fill": "white"})
    axes = ET.SubElement(svg, "g", {"stroke": "black", "stroke-width": "1"})
    ET.SubElement(axes, "line", {"x1": str(_ML), "y1": str(_MT + ph), "x2": str(_ML + pw), "y2": str(_MT + ph)})
    ET.SubElement(axes, "line", {"x1": str(_ML), "y1": str(_MT), "x2": str(_ML), "y2": str(_MT + ph)})
    text = ET.SubElement(svg, "g", {"font-family": "sans-serif", "font-size": "11"})
    for x in xs:
        ET.SubElement(text, "text", {"x": f"{px(x):.2f}", "y": str(_MT + ph + 16), "text-anchor": "middle"}).text = f"{x:.2g}"
    for frac in (0.0, 0.5, 1.0):
        y = ylo + frac * (yhi - ylo)
        ET.SubElement(text, "text", {"x": str(_ML - 6), "y": f"{py(y) + 4:.2f}", "text-anchor": "end"}).text = f"{y:.3g}"
    ET.SubElement(text, "text", {"x": str(_ML + pw / 2), "y": str(_H - 10), "text-anchor": "middle"}).text = "log10(gamma)"
    ET.SubElement(
        text, "text", {"x": "14", "y": str(_MT + ph / 2), "text-anchor": "middle", "transform": f"rotate(-90 14 {_MT + ph / 2})"}
    ).text = label

    for li, (lam, values) in enumerate(zip(result.lambdas, series)):
        color = _PALETTE[li % len(_PALETTE)]
        pts = [(px(x), py(v)) for x, v in zip(xs, values) if math.isfinite(v)]
        group = ET.SubElement(svg, "g", {"class": "lambda-series", "data-lambda": _fmt(lam)})
        ET.SubElement(
            group,
            "polyline",
            {
                "points": " ".join(f"{a:.2f},{b:.2f}" for a, b in pts),
                "fill": "none",
                "stroke": color,
                "stroke-width": "2",
            },
        )
        for a, b in pts:
            ET.SubElement(group, "circle", {"cx": f"{a:.2f}", "cy": f"{b:.2f}", "r": "3", "fill": color})
        ly = _MT + 14 * li
        ET.SubElement(text, "text", {"x": str(_ML + pw + 10), "y": str(ly + 4), "fill": color}).text = f"lambda={lam:g}"

    for k, (method, value) in enumerate(refs):
        if not math.isfinite(value):
            continue
        dash = "2,3" if method == "ipw" else "8,4"
        ET.SubElement(
            svg,
            "line",
            {
                "class": f"baseline baseline-{method}",
                "x1": str(_ML),
                "x2": str(_ML + pw),
                "y1": f"{py(value):.2f}",
                "y2": f"{py(value):.2f}",
                "stroke": "black",
                "stroke-dasharray": dash,
            },
        )
        ET.SubElement(text, "text", {"x": str(_ML + pw + 10), "y": str(_MT + 14 * (len(result.lambdas) + k) + 4)}).text = method

    tree = ET.ElementTree(svg)
    ET.indent(tree)
    tree.write(path, encoding="utf-8", xml_declaration=True)
