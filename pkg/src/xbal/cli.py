"""Command-line front end: ``xbal {solve,sweep,baselines,bound,diagnose,simulate}``.

Options come from flags and, optionally, a flat JSON file given with
``--config`` whose keys mirror the flag names (``"lambda"``, ``"holder-a"``
or ``"holder_a"``, ...). Flags given on the command line override file values.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import bounds as bnd
from .data import (
    DataError,
    Dataset,
    ExtrapNorm,
    HolderParams,
    ImbalanceNorm,
    NumericalError,
    ProblemConfig,
    SolverConfig,
    TargetSpec,
    minmax_scale,
    read_source_csv,
    read_target_csv,
    write_source_csv,
    write_target_csv,
)
from .dgp import REFERENCE_SEED, Kind, Scenario, ScenarioSpec, generate, replicate
from .diagnostics import diagnose
from .implied import ipw_transport_weights, ols_weights
from .sensitivity import BASELINES, MSEOracle, SVG_KINDS, SweepGrid, emit_csv, emit_svg, log_grid, run_sweep
from .solver import solve, solve_closed_form_ridge_path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("xbal")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(message)


# option name (as stored after flag/config merging) -> default
DEFAULTS: dict[str, Any] = {
    "source": None,
    "target": None,
    "out": "out",
    "gamma": 0.0,
    "lambda": 0.1,
    "alpha": 1.0,
    "holder_a": 1.0,
    "sigma": 0.0,
    "delta": 0.05,
    "p_imbalance": "l2",
    "p_extrap": "l1",
    "normalize": True,
    "scale": False,
    "epochs": 5000,
    "lr": 0.01,
    "seed": 0,
    "grid_gamma": "0.01:10:10",
    "grid_lambda": "0.01,0.1,1,10",
    "bound": None,
    "baselines": None,
    "workers": 1,
    "scenario": None,
    "n": 10,
    "d": 2,
    "noise_sd": 0.1,
    "hull_gap": 0.25,
    "weights": None,
    "kind": "linear",
    "reps": 100,
    "estimator": "solver",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    io = p.add_argument_group("input / output")
    io.add_argument("--config", default=None, help="flat JSON file of option values (flags override)")
    io.add_argument("--source", default=S, help="source CSV (unit_id, features..., y)")
    io.add_argument("--target", default=S, help="target CSV: one row = point, several rows = sample")
    io.add_argument(
        "--scenario",
        choices=[k.value for k in Kind],
        default=S,
        help="use a generated hull-violation scenario instead of --source/--target",
    )
    io.add_argument("--n", type=int, default=S, help="scenario units (default 10)")
    io.add_argument("--d", type=int, default=S, help="scenario features (default 2)")
    io.add_argument("--noise-sd", dest="noise_sd", type=float, default=S, help="scenario noise SD (default 0.1)")
    io.add_argument("--hull-gap", dest="hull_gap", type=float, default=S, help="target distance to hull (default 0.25)")
    io.add_argument("--out", default=S, help="output directory (default ./out)")
    io.add_argument("--scale", dest="scale", action="store_true", default=S, help="min-max scale features")
    io.add_argument("--no-scale", dest="scale", action="store_false", default=S)

    pr = p.add_argument_group("problem")
    pr.add_argument("--gamma", type=float, default=S, help="extrapolation penalty (default 0)")
    pr.add_argument("--lambda", dest="lambda", type=float, default=S, help="ridge penalty (default 0.1)")
    pr.add_argument("--alpha", type=float, default=S, help="Hoelder exponent (default 1)")
    pr.add_argument("--holder-a", dest="holder_a", type=float, default=S, help="Hoelder constant a (default 1)")
    pr.add_argument("--sigma", type=float, default=S, help="noise SD used by bounds (default 0)")
    pr.add_argument("--delta", type=float, default=S, help="bound failure probability (default 0.05)")
    pr.add_argument("--p-imbalance", dest="p_imbalance", choices=[e.value for e in ImbalanceNorm], default=S)
    pr.add_argument("--p-extrap", dest="p_extrap", choices=[e.value for e in ExtrapNorm], default=S)
    pr.add_argument("--normalize", dest="normalize", action="store_true", default=S, help="sum-to-one (default)")
    pr.add_argument("--no-normalize", dest="normalize", action="store_false", default=S)

    so = p.add_argument_group("solver")
    so.add_argument("--epochs", type=int, default=S, help="Adam epochs (default 5000)")
    so.add_argument("--lr", type=float, default=S, help="Adam learning rate (default 0.01)")
    so.add_argument("--seed", type=int, default=S, help="root seed (default 0)")
    so.add_argument("-v", "--verbose", action="count", default=0, help="-vv logs every epoch")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="xbal", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve for balancing weights")
    _add_common(p)

    p = sub.add_parser("sweep", help="(gamma, lambda) sensitivity sweep")
    _add_common(p)
    p.add_argument("--grid-gamma", dest="grid_gamma", default=S, help="a:b:k, k log-spaced values (default 0.01:10:10)")
    p.add_argument("--grid-lambda", dest="grid_lambda", default=S, help="comma list (default 0.01,0.1,1,10)")
    p.add_argument("--baselines", default=S, help=f"comma list from {','.join(BASELINES)}, or 'none'")
    p.add_argument("--bound", choices=[v.value for v in bnd.Variant if v is not bnd.Variant.PROP1], default=S)
    p.add_argument("--workers", type=int, default=S, help="parallel worker processes (default 1)")

    p = sub.add_parser("baselines", help="OLS / ridge / IPW implied weights")
    _add_common(p)

    p = sub.add_parser("bound", help="error bound for a weight vector")
    _add_common(p)
    p.add_argument("--bound", choices=[v.value for v in bnd.Variant], default=S, help="variant (default worst)")
    p.add_argument("--weights", default=S, help="weights CSV (default: solve with the given options)")

    p = sub.add_parser("diagnose", help="diagnostics for a weights file")
    _add_common(p)
    p.add_argument("--weights", default=S, help="weights CSV (unit_id, weight)")

    p = sub.add_parser("simulate", help="replication study on a generated scenario")
    _add_common(p)
    p.add_argument("--kind", choices=[k.value for k in Kind], default=S)
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--estimator", choices=["solver", "ols", "ridge"], default=S)
    p.add_argument("--grid-gamma", dest="grid_gamma", default=S, help="also tabulate MSE over this gamma grid")
    p.add_argument("--grid-lambda", dest="grid_lambda", default=S)
    return parser


def _resolve(ns: argparse.Namespace) -> dict[str, Any]:
    opts = dict(DEFAULTS)
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"malformed config {ns.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a flat JSON object")
        for key, value in cfg.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            if isinstance(value, (dict, list)) and key not in ("grid_lambda",):
                raise UsageError(f"config key {key!r} must be a scalar")
            opts[key] = value
    for key, value in vars(ns).items():
        if key in DEFAULTS:
            opts[key] = value
    opts["command"] = ns.command
    opts["verbose"] = ns.verbose
    return opts


def _float_list(spec: Any) -> tuple[float, ...]:
    if isinstance(spec, (list, tuple)):
        return tuple(float(v) for v in spec)
    try:
        return tuple(float(v) for v in str(spec).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad number list {spec!r}") from None


def parse_gamma_grid(spec: str) -> tuple[float, ...]:
    """``"a:b:k"`` -> k log-spaced values from a to b."""
    parts = str(spec).split(":")
    try:
        if len(parts) != 3:
            raise ValueError
        lo, hi, k = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"--grid-gamma expects a:b:k, got {spec!r}") from None
    if not (0 < lo <= hi) or k < 1:
        raise UsageError("--grid-gamma needs 0 < a <= b and k >= 1")
    return log_grid(lo, hi, k)


def problem_config(o: dict[str, Any]) -> ProblemConfig:
    return ProblemConfig(
        lam=float(o["lambda"]),
        gamma=float(o["gamma"]),
        p_imbalance=o["p_imbalance"],
        p_extrap=o["p_extrap"],
        normalize_sum_to_one=bool(o["normalize"]),
        holder=HolderParams(
            a=float(o["holder_a"]), alpha=float(o["alpha"]), sigma=float(o["sigma"]), delta=float(o["delta"])
        ),
    )


def solver_config(o: dict[str, Any]) -> SolverConfig:
    return SolverConfig(learning_rate=float(o["lr"]), epochs=int(o["epochs"]), seed=int(o["seed"]))


def scenario_spec(o: dict[str, Any], kind: str) -> ScenarioSpec:
    seed = o["seed"] if "seed" in o["_given"] else REFERENCE_SEED
    return ScenarioSpec(
        kind=kind, n=int(o["n"]), d=int(o["d"]), noise_sd=float(o["noise_sd"]), hull_gap=float(o["hull_gap"]), seed=int(seed)
    )


@dataclass
class Inputs:
    data: Dataset
    target: TargetSpec
    scenario: Scenario | None = None
    spec: ScenarioSpec | None = None


def load_inputs(o: dict[str, Any]) -> Inputs:
    if o["scenario"]:
        spec = scenario_spec(o, o["scenario"])
        sc = generate(spec)
        data, target = sc.data, sc.target
    else:
        if not o["source"] or not o["target"]:
            raise UsageError("--source and --target are required (or use --scenario)")
        for key in ("source", "target"):
            if not Path(o[key]).is_file():
                raise DataError(f"{key} file not found: {o[key]}")
        data = read_source_csv(o["source"])
        target = read_target_csv(o["target"])
        target.check(data)
        sc = spec = None
    if o["scale"]:
        data, target, _ = minmax_scale(data, target)
    return Inputs(data, target, sc, spec)


class Outputs:
    """Artifacts written under one directory, hashed into ``manifest.json``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        # created on first write, so failed runs leave nothing behind
        self.root.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return self.root / name

    def json(self, name: str, payload: Any) -> None:
        text = json.dumps(_finite(payload), indent=2, sort_keys=True, default=_jsonable, allow_nan=False)
        self.path(name).write_text(text + "\n", encoding="utf-8")

    def manifest(self, options: dict[str, Any]) -> Path:
        artifacts = [
            {"path": name, "sha256": hashlib.sha256((self.root / name).read_bytes()).hexdigest()}
            for name in sorted(set(self.files))
        ]
        shown = {k: v for k, v in sorted(options.items()) if not k.startswith("_") and k not in ("out", "verbose")}
        target = self.root / "manifest.json"
        target.write_text(
            json.dumps({"artifacts": artifacts, "options": shown}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return target


def _finite(x):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, (float, np.floating)) and not np.isfinite(x):
        return None
    return x


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def write_weights_csv(path: Path, unit_ids: Sequence[str], columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    lines = [",".join(["unit_id", *names])]
    for i, uid in enumerate(unit_ids):
        lines.append(",".join([uid, *(format(float(columns[c][i]), ".17g") for c in names)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_weights_csv(path: str | Path, data: Dataset) -> np.ndarray:
    import csv

    p = Path(path)
    if not p.is_file():
        raise DataError(f"weights file not found: {path}")
    with open(p, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "weight" not in rows[0]:
        raise DataError(f"{path}: expected columns unit_id, weight")
    by_id = {}
    for i, r in enumerate(rows):
        try:
            by_id[r.get("unit_id", str(i))] = float(r["weight"])
        except ValueError:
            raise DataError(f"{path}: bad weight at row {i}") from None
    missing = [u for u in data.unit_ids if u not in by_id]
    if missing or len(by_id) != data.n:
        raise DataError(f"{path}: weights do not match the source units")
    return np.array([by_id[u] for u in data.unit_ids])


def cmd_solve(o: dict[str, Any], out: Outputs) -> None:
    inp = load_inputs(o)
    res = solve(inp.data, inp.target, problem_config(o), solver_config(o))
    w = res.weights.weights
    write_weights_csv(out.path("weights.csv"), inp.data.unit_ids, {"weight": w})
    out.json("diagnostics.json", diagnose(w, inp.data, inp.target).as_dict())
    out.json(
        "objective.json",
        {
            **res.breakdown.as_dict(),
            "estimate": float(w @ inp.data.outcomes),
            "epochs_run": res.trace.epochs_run,
            "best_epoch": res.trace.best_epoch,
            "stopped_early": res.trace.stopped_early,
        },
    )
    res.trace.to_csv(out.path("trace.csv"))
    if inp.scenario is not None:
        write_source_csv(inp.data, out.path("source.csv"))
        write_target_csv(inp.target, out.path("target.csv"))


def _oracle(inp: Inputs) -> MSEOracle | None:
    if inp.scenario is None:
        return None
    sc = inp.scenario
    return MSEOracle(sc.truth(sc.data.features), float(sc.truth(sc.target.point)), inp.spec.noise_sd)


def cmd_sweep(o: dict[str, Any], out: Outputs) -> None:
    inp = load_inputs(o)
    if o["baselines"] is None:
        names = {"ols", "ridge"} | ({"ipw"} if inp.target.sample is not None else set())
    elif str(o["baselines"]).strip().lower() == "none":
        names = set()
    else:
        names = {s.strip() for s in str(o["baselines"]).split(",") if s.strip()}
    try:
        grid = SweepGrid(
            gammas=parse_gamma_grid(o["grid_gamma"]),
            lambdas=_float_list(o["grid_lambda"]),
            base_config=problem_config(o),
            baselines=frozenset(names),
        )
    except DataError as exc:
        raise UsageError(str(exc)) from None
    result = run_sweep(
        inp.data,
        inp.target,
        grid,
        solver_config(o),
        bound=o["bound"],
        oracle=_oracle(inp),
        workers=int(o["workers"]),
    )
    emit_csv(result, out.path("sweep.csv"))
    for kind in SVG_KINDS:
        emit_svg(result, kind, out.path(f"sweep_{kind}.svg"))
    if o["bound"]:
        out.json(
            "sweep_bounds.json",
            [
                {"gamma": c.gamma, "lambda": c.lam, "bound": c.bound.to_dict() if c.bound else None}
                for c in result.cells
            ],
        )
    failed = sum(not c.converged for c in result.cells)
    if failed:
        log.warning("%d of %d cells failed", failed, len(result.cells))


def cmd_baselines(o: dict[str, Any], out: Outputs) -> None:
    inp = load_inputs(o)
    columns: dict[str, np.ndarray] = {}
    report: dict[str, Any] = {}
    candidates = {
        "ols": lambda: ols_weights(inp.data, inp.target),
        "ridge": lambda: solve_closed_form_ridge_path(inp.data, inp.target, float(o["lambda"])),
        "ipw": lambda: ipw_transport_weights(inp.data, inp.target),
    }
    for name, make in candidates.items():
        try:
            w = make().weights
        except (DataError, NumericalError, np.linalg.LinAlgError) as exc:
            report[name] = {"error": str(exc)}
            continue
        columns[name] = w
        report[name] = {"estimate": float(w @ inp.data.outcomes), **diagnose(w, inp.data, inp.target).as_dict()}
    if not columns:
        raise NumericalError("no baseline could be computed")
    write_weights_csv(out.path("baseline_weights.csv"), inp.data.unit_ids, columns)
    out.json("baselines.json", report)


def cmd_bound(o: dict[str, Any], out: Outputs) -> None:
    inp = load_inputs(o)
    cfg = problem_config(o)
    if o["weights"]:
        w = read_weights_csv(o["weights"], inp.data)
    else:
        w = solve(inp.data, inp.target, cfg, solver_config(o)).weights.weights
    variant = bnd.Variant(o["bound"] or "worst")
    oracle = None
    if variant is bnd.Variant.PROP1:
        if inp.scenario is None:
            raise UsageError("the prop1 bound needs the true even part; use --scenario")
        truth = inp.scenario.truth
        oracle = lambda x: 0.5 * (float(truth(x)) + float(truth(-np.asarray(x))))  # noqa: E731
    report = bnd.compute_bound(variant, w, inp.data, inp.target, cfg.holder, oracle)
    report.to_json(out.path("bound.json"))


def cmd_diagnose(o: dict[str, Any], out: Outputs | None) -> dict[str, Any]:
    if not o["weights"]:
        raise UsageError("diagnose needs --weights")
    inp = load_inputs(o)
    w = read_weights_csv(o["weights"], inp.data)
    record = diagnose(w, inp.data, inp.target).as_dict()
    print(json.dumps(record, indent=2, sort_keys=True))
    return record


def cmd_simulate(o: dict[str, Any], out: Outputs) -> None:
    spec = scenario_spec(o, o["kind"])
    cfg, scfg = problem_config(o), solver_config(o)

    def estimator_for(cfg_: ProblemConfig):
        if o["estimator"] == "ols":
            return lambda d, t: ols_weights(d, t)
        if o["estimator"] == "ridge":
            return lambda d, t: solve_closed_form_ridge_path(d, t, cfg_.lam)
        return lambda d, t: solve(d, t, cfg_, scfg).weights

    reps = int(o["reps"])
    # every estimator here is a linear smoother, so weights are computed once
    rep = replicate(spec, estimator_for(cfg), reps, reuse_weights=True)
    header = list(rep.rows[0])
    lines = [",".join(header)]
    for row in rep.rows:
        lines.append(",".join(_cell(row[k]) for k in header))
    out.path("replications.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    out.json("summary.json", {**rep.summary(), "scenario": _spec_dict(spec), "problem": cfg.to_dict()})
    if "grid_gamma" in o["_given"] and o["estimator"] == "solver":
        lines = ["gamma,lambda,mse,mc_se"]
        for g in parse_gamma_grid(o["grid_gamma"]):
            for lam in _float_list(o["grid_lambda"]):
                r = replicate(spec, estimator_for(cfg.with_(gamma=g, lam=lam)), reps, reuse_weights=True)
                lines.append(",".join(_cell(v) for v in (g, lam, r.mse, r.mc_se)))
        out.path("mse_by_gamma.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _spec_dict(spec: ScenarioSpec) -> dict[str, Any]:
    return {
        "kind": spec.kind.value,
        "n": spec.n,
        "d": spec.d,
        "beta": list(spec.beta),
        "noise_sd": spec.noise_sd,
        "hull_gap": spec.hull_gap,
        "seed": spec.seed,
    }


COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "baselines": cmd_baselines,
    "bound": cmd_bound,
    "simulate": cmd_simulate,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code."""
    try:
        ns = build_parser().parse_args(argv)
        o = _resolve(ns)
        o["_given"] = {k for k in vars(ns) if k in DEFAULTS} | (
            set(_config_keys(ns.config)) if ns.config else set()
        )
        logging.basicConfig(
            level=logging.DEBUG if o["verbose"] >= 2 else logging.INFO if o["verbose"] else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if o["command"] == "diagnose":
            cmd_diagnose(o, None)
            return EXIT_OK
        out = Outputs(o["out"])
        COMMANDS[o["command"]](o, out)
        out.manifest(o)
        return EXIT_OK
    except UsageError as exc:
        print(f"xbal: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"xbal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError) as exc:
        print(f"xbal: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def _config_keys(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [k.replace("-", "_") for k in json.load(fh)]


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
