from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xbal.data import (
    DataError,
    Dataset,
    ProblemConfig,
    SolverConfig,
    TargetSpec,
    WeightVector,
    add_intercept,
    minmax_scale,
    read_source_csv,
    read_target_csv,
    validate_dataset,
    write_source_csv,
    write_target_csv,
)


def test_validate_two_rows():
    data = validate_dataset({"features": [[1, 0], [0, 1]], "outcomes": [1, 2]})
    assert (data.n, data.d) == (2, 2)
    np.testing.assert_array_equal(data.features, [[1, 0], [0, 1]])


def test_validate_rows_from_csv_dicts():
    rows = [{"unit_id": "a", "x1": "1", "x2": "0", "y": "1"}, {"unit_id": "b", "x1": "0", "x2": "1", "y": "2"}]
    data = validate_dataset(rows)
    assert data.unit_ids == ("a", "b")
    np.testing.assert_array_equal(data.outcomes, [1, 2])


def test_nan_cell_is_named():
    rows = [{"x1": "1", "y": "1"}, {"x1": "nan", "y": "2"}]
    with pytest.raises(DataError, match=r"row 1, column 'x1'"):
        validate_dataset(rows)


def test_nan_in_matrix_is_named():
    with pytest.raises(DataError, match="row 1, column 0"):
        Dataset([[1.0], [np.nan]], [1.0, 2.0])


def test_outcome_length_mismatch():
    with pytest.raises(DataError, match="dimension mismatch"):
        validate_dataset({"features": [[1, 0], [0, 1]], "outcomes": [1, 2, 3]})


@pytest.mark.parametrize(
    "rows",
    [[], [{"y": "1"}], [{"x1": "1"}]],
)
def test_empty_or_missing_columns(rows):
    with pytest.raises(DataError):
        validate_dataset(rows)


def test_datasets_are_immutable():
    data = Dataset([[1.0]], [2.0])
    with pytest.raises(ValueError):
        data.features[0, 0] = 5.0


def test_target_point_from_sample_mean():
    t = TargetSpec(sample=[[0.0, 2.0], [2.0, 4.0]])
    np.testing.assert_array_equal(t.point, [1.0, 3.0])


def test_explicit_target_point_wins():
    t = TargetSpec(point=[9.0, 9.0], sample=[[0.0, 2.0], [2.0, 4.0]])
    np.testing.assert_array_equal(t.point, [9.0, 9.0])


def test_target_dimension_check():
    with pytest.raises(DataError, match="dimension mismatch"):
        TargetSpec(point=[1.0, 2.0]).check(Dataset([[1.0]], [1.0]))


def test_config_validation():
    with pytest.raises(DataError):
        ProblemConfig(lam=-1)
    with pytest.raises(DataError):
        ProblemConfig(gamma=-1)
    with pytest.raises(ValueError):
        ProblemConfig(p_extrap="l3")
    with pytest.raises(DataError):
        SolverConfig(epochs=0)
    with pytest.raises(DataError):
        SolverConfig(method="newton")


def test_weight_vector_rejects_non_finite():
    with pytest.raises(ArithmeticError):
        WeightVector([1.0, np.inf], "test")


def test_minmax_affine_map():
    data = Dataset([[2.0], [4.0]], [0.0, 0.0])
    scaled, target, rec = minmax_scale(data, TargetSpec(point=[6.0]))
    np.testing.assert_array_equal(scaled.features.ravel(), [0.0, 1.0])
    # the target is free to leave [0, 1]
    assert target.point[0] == 2.0
    np.testing.assert_array_equal(rec.span, [2.0])


def test_minmax_constant_column():
    data = Dataset([[5.0, 1.0], [5.0, 3.0]], [0.0, 0.0])
    with pytest.warns(UserWarning, match="constant"):
        scaled, _, rec = minmax_scale(data, TargetSpec(point=[5.0, 2.0]))
    np.testing.assert_array_equal(scaled.features[:, 0], [0.0, 0.0])
    assert rec.span[0] == 1.0


def test_minmax_scales_target_sample_with_same_record():
    data = Dataset([[2.0], [4.0]], [0.0, 0.0])
    scaled, target, rec = minmax_scale(data, TargetSpec(sample=[[3.0], [5.0]]))
    np.testing.assert_allclose(target.sample.ravel(), rec.transform([[3.0], [5.0]]).ravel())
    np.testing.assert_allclose(target.point, rec.transform(np.array([4.0])))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-1e3, 1e3)))
def test_minmax_round_trip(X):
    data = Dataset(X, np.zeros(6))
    with np.errstate(all="ignore"):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            scaled, _, rec = minmax_scale(data, TargetSpec(point=X[0]))
    np.testing.assert_allclose(rec.inverse(scaled.features), X, atol=1e-12 * max(1.0, np.abs(X).max()))


def test_add_intercept():
    data, target = add_intercept(Dataset([[1.0], [2.0]], [0.0, 0.0]), TargetSpec(point=[3.0]))
    np.testing.assert_array_equal(data.features, [[1, 1], [1, 2]])
    np.testing.assert_array_equal(target.point, [1, 3])


def test_csv_round_trip(tmp_path, rng):
    X = rng.standard_normal((5, 3))
    data = Dataset(X, rng.standard_normal(5), tuple(f"u{i}" for i in range(5)))
    write_source_csv(data, tmp_path / "s.csv")
    back = read_source_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.features, data.features)
    np.testing.assert_array_equal(back.outcomes, data.outcomes)
    assert back.unit_ids == data.unit_ids

    write_target_csv(TargetSpec(point=X[0]), tmp_path / "t.csv")
    np.testing.assert_array_equal(read_target_csv(tmp_path / "t.csv").point, X[0])

    write_target_csv(TargetSpec(sample=X), tmp_path / "ts.csv")
    t = read_target_csv(tmp_path / "ts.csv")
    np.testing.assert_array_equal(t.sample, X)


def test_source_csv_named_columns(tmp_path):
    path = tmp_path / "s.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["age", "unit_id", "dose", "y"])
        w.writerow(["30", "a", "1.5", "2"])
        w.writerow(["40", "b", "0.5", "3"])
    data = read_source_csv(path, feature_columns=["dose", "age"])
    np.testing.assert_array_equal(data.features, [[1.5, 30], [0.5, 40]])
