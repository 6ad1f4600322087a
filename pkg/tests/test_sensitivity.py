from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from xbal.data import DataError, ProblemConfig, SolverConfig, TargetSpec
from xbal.diagnostics import simplex_balance
from xbal.sensitivity import (
    CSV_COLUMNS,
    SweepGrid,
    emit_csv,
    emit_svg,
    log_grid,
    read_csv,
    run_sweep,
)
from xbal.solver import objective, solve

SVG = "{http://www.w3.org/2000/svg}"


def test_grid_validation():
    with pytest.raises(DataError):
        SweepGrid(gammas=())
    with pytest.raises(DataError):
        SweepGrid(gammas=(1.0, 0.1))
    with pytest.raises(DataError):
        SweepGrid(gammas=(0.1, 0.1))
    with pytest.raises(DataError):
        SweepGrid(gammas=(0.0, 1.0))
    with pytest.raises(DataError):
        SweepGrid(gammas=(1.0,), lambdas=(-1.0,))
    with pytest.raises(DataError):
        SweepGrid(gammas=(1.0,), baselines=frozenset({"forest"}))
    np.testing.assert_allclose(log_grid(0.01, 10, 4), [0.01, 0.1, 1, 10])


def test_single_cell_matches_direct_solve(hull_instance):
    data, target = hull_instance.data, hull_instance.target
    res = run_sweep(data, target, SweepGrid(gammas=(0.5,), lambdas=(0.1,)))
    assert len(res.cells) == 1
    direct = solve(data, target, ProblemConfig(lam=0.1, gamma=0.5))
    cell = res.cells[0]
    np.testing.assert_array_equal(cell.weights, direct.weights.weights)
    assert cell.breakdown == direct.breakdown
    assert (cell.gamma, cell.lam) == (0.5, 0.1)


def test_path_properties(hull_instance):
    data, target = hull_instance.data, hull_instance.target
    grid = SweepGrid(gammas=log_grid(0.01, 1e6, 9), lambdas=(0.01, 0.1, 1.0))
    res = run_sweep(data, target, grid)
    assert len(res.cells) == 27
    for li, lam in enumerate(grid.lambdas):
        ni = res.column(li, lambda c: c.diagnostics.negative_influence)
        assert np.all(np.diff(ni) <= 1e-6)
        tc = res.column(li, lambda c: c.breakdown.extrapolation_term)
        assert tc[-1] <= tc.min() + 1e-12
        last = res.cell(len(grid.gammas) - 1, li)
        assert last.diagnostics.negative_influence < 1e-3
        _, f = simplex_balance(data.features, target.point, lam)
        assert last.breakdown.total <= f + 1e-2


def test_cells_carry_their_parameters_in_order(hull_instance):
    grid = SweepGrid(gammas=(0.1, 1.0, 10.0), lambdas=(0.01, 1.0))
    res = run_sweep(hull_instance.data, hull_instance.target, grid)
    assert [(c.gamma, c.lam) for c in res.cells] == [(g, l) for g in grid.gammas for l in grid.lambdas]


def test_parallel_matches_sequential(hull_instance):
    grid = SweepGrid(gammas=(0.1, 1.0), lambdas=(0.01, 1.0))
    a = run_sweep(hull_instance.data, hull_instance.target, grid)
    b = run_sweep(hull_instance.data, hull_instance.target, grid, workers=2)
    for x, y in zip(a.cells, b.cells):
        np.testing.assert_array_equal(x.weights, y.weights)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failed_cell_is_flagged(hull_instance):
    grid = SweepGrid(gammas=(0.1, 1.0), lambdas=(0.1,))
    res = run_sweep(hull_instance.data, hull_instance.target, grid, SolverConfig(learning_rate=1e300))
    assert not any(c.converged for c in res.cells)
    assert all(c.error for c in res.cells)


def test_baselines_once(hull_instance):
    grid = SweepGrid(gammas=(0.1, 1.0), lambdas=(0.1,), baselines=frozenset({"ols", "ridge", "ipw"}))
    res = run_sweep(hull_instance.data, hull_instance.target, grid)
    assert [r.method for r in res.baseline_rows] == ["ols", "ridge", "ipw"]
    ols, ridge, ipw = res.baseline_rows
    assert ols.error == "" and ridge.error == ""
    assert "target sample" in ipw.error  # the scenario has a target point only


def test_csv_schema_and_round_trip(tmp_path, hull_instance):
    grid = SweepGrid(gammas=(0.3,), lambdas=(0.1,), baselines=frozenset({"ols"}))
    res = run_sweep(hull_instance.data, hull_instance.target, grid)
    path = tmp_path / "sweep.csv"
    emit_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[0].startswith(
        "gamma,lambda,estimate,term_a,term_b,term_c,neg_influence,balance_rmse,l2_norm,ess,converged"
    )
    assert len(lines) == 3
    rows = read_csv(path)
    cell = res.cells[0]
    assert float(rows[0]["estimate"]) == cell.estimate
    assert float(rows[0]["term_a"]) == cell.breakdown.imbalance_term
    assert float(rows[0]["ess"]) == cell.diagnostics.ess
    assert rows[0]["converged"] == "true"
    assert rows[1]["method"] == "ols" and rows[1]["gamma"] == ""


def test_csv_is_deterministic(tmp_path, hull_instance):
    grid = SweepGrid(gammas=(0.1, 1.0), lambdas=(0.1, 1.0))
    emit_csv(run_sweep(hull_instance.data, hull_instance.target, grid), tmp_path / "a.csv")
    emit_csv(run_sweep(hull_instance.data, hull_instance.target, grid), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_grid_permutation_only_changes_order(hull_instance):
    data, target = hull_instance.data, hull_instance.target
    res = run_sweep(data, target, SweepGrid(gammas=(0.1, 1.0), lambdas=(0.01, 1.0)))
    for c in res.cells:
        single = run_sweep(data, target, SweepGrid(gammas=(c.gamma,), lambdas=(c.lam,)))
        np.testing.assert_array_equal(single.cells[0].weights, c.weights)


@pytest.mark.parametrize("kind", ["estimate", "balance", "neg_influence", "norm"])
def test_svg_structure(tmp_path, hull_instance, kind):
    grid = SweepGrid(gammas=(0.1, 1.0, 10.0), lambdas=(0.01, 0.1, 1.0))
    res = run_sweep(hull_instance.data, hull_instance.target, grid)
    emit_svg(res, kind, tmp_path / "a.svg")
    root = ET.parse(tmp_path / "a.svg").getroot()
    assert root.tag == f"{SVG}svg"
    assert len(root.findall(f".//{SVG}polyline")) == 3
    assert not [e for e in root.iter(f"{SVG}line") if "baseline" in e.get("class", "")]


def test_svg_single_cell_and_baselines(tmp_path, hull_instance):
    data = hull_instance.data
    target = TargetSpec(point=hull_instance.target.point, sample=data.features[:5] + 0.2)
    grid = SweepGrid(gammas=(1.0,), lambdas=(0.1,), baselines=frozenset({"ols", "ipw"}))
    res = run_sweep(data, target, grid)
    emit_svg(res, "estimate", tmp_path / "one.svg")
    root = ET.parse(tmp_path / "one.svg").getroot()
    assert len(root.findall(f".//{SVG}circle")) == 1
    lines = {e.get("class"): e for e in root.iter(f"{SVG}line") if "baseline" in e.get("class", "")}
    assert lines["baseline baseline-ols"].get("stroke-dasharray") == "8,4"
    assert lines["baseline baseline-ipw"].get("stroke-dasharray") == "2,3"
    with pytest.raises(ValueError):
        emit_svg(res, "surface", tmp_path / "x.svg")


def test_oracle_mse_column(tmp_path):
    from xbal.dgp import ScenarioSpec, generate
    from xbal.sensitivity import MSEOracle

    spec = ScenarioSpec(kind="nonlinear")
    sc = generate(spec)
    oracle = MSEOracle(sc.truth(sc.data.features), float(sc.truth(sc.target.point)), spec.noise_sd)
    res = run_sweep(sc.data, sc.target, SweepGrid(gammas=log_grid(0.01, 10, 10), lambdas=(0.1,)), oracle=oracle)
    mse = res.column(0, lambda c: c.mse)
    k = int(np.argmin(mse))
    assert 0 < k < len(mse) - 1
    w = res.cells[k].weights
    bias = w @ sc.truth(sc.data.features) - sc.truth(sc.target.point)
    assert mse[k] == pytest.approx(bias**2 + 0.01 * w @ w)
    assert res.cells[0].breakdown == objective(res.cells[0].weights, sc.data, sc.target, ProblemConfig(lam=0.1, gamma=0.01))
