"""Series core: CSV loading, scaling, splitting, windows, and MAE."""

from __future__ import annotations

import random

import numpy as np
import pytest

from flairr.errors import DataError
from flairr.series import (
    Scaler,
    TimeSeries,
    WindowPair,
    fit_scaler,
    invert_scaler,
    load_csv,
    mae,
    split,
    window_at,
)


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_csv_auto_detects_timestamp_column(tmp_path):
    p = write_csv(
        tmp_path / "data.csv",
        "date,HUFL,OT\n2016-07-01 00:00:00,5.827,30.531\n2016-07-01 01:00:00,5.693,27.787\n",
    )
    series = load_csv(p, target="OT")
    assert series.column_names == ["HUFL", "OT"]
    assert series.timestamps == ["2016-07-01 00:00:00", "2016-07-01 01:00:00"]
    assert series.target_values.tolist() == [30.531, 27.787]
    assert len(series) == 2


def test_load_csv_numeric_first_column_is_data(tmp_path):
    p = write_csv(tmp_path / "data.csv", "a,b\n1,2\n3,4\n")
    series = load_csv(p, target="a")
    assert series.timestamps is None
    assert series.column_names == ["a", "b"]


def test_load_csv_explicit_timestamp_column(tmp_path):
    p = write_csv(tmp_path / "data.csv", "idx,v\n10,1.5\n20,2.5\n")
    series = load_csv(p, target="v", timestamp_column="idx")
    assert series.timestamps == ["10", "20"]
    assert series.column_names == ["v"]


def test_load_csv_missing_file():
    with pytest.raises(DataError, match="cannot open"):
        load_csv("/nonexistent/nowhere.csv", target="x")


def test_load_csv_unknown_target(tmp_path):
    p = write_csv(tmp_path / "data.csv", "a,b\n1,2\n")
    with pytest.raises(DataError, match="unknown target"):
        load_csv(p, target="zz")


def test_load_csv_non_numeric_cell_names_row_and_column(tmp_path):
    p = write_csv(tmp_path / "data.csv", "a,b\n1,2\n3,oops\n")
    with pytest.raises(DataError, match=r"'oops' at row 2, column 'b'"):
        load_csv(p, target="a")


def test_load_csv_rejects_nan_and_inf(tmp_path):
    p = write_csv(tmp_path / "data.csv", "a\nnan\n")
    with pytest.raises(DataError, match="non-finite"):
        load_csv(p, target="a")
    p2 = write_csv(tmp_path / "data2.csv", "a\ninf\n")
    with pytest.raises(DataError, match="non-finite"):
        load_csv(p2, target="a")


def test_load_csv_ragged_row(tmp_path):
    p = write_csv(tmp_path / "data.csv", "a,b\n1,2\n3\n")
    with pytest.raises(DataError, match="ragged row 2"):
        load_csv(p, target="a")


def test_load_csv_empty_and_header_only(tmp_path):
    p = write_csv(tmp_path / "empty.csv", "")
    with pytest.raises(DataError, match="empty file"):
        load_csv(p, target="a")
    p2 = write_csv(tmp_path / "header.csv", "a,b\n")
    with pytest.raises(DataError, match="no data rows"):
        load_csv(p2, target="a")


def test_timestamps_must_strictly_increase(tmp_path):
    p = write_csv(
        tmp_path / "data.csv",
        "date,v\n2020-01-02,1\n2020-01-01,2\n",
    )
    with pytest.raises(DataError, match="strictly increasing"):
        load_csv(p, target="v")


def test_timeseries_validation():
    with pytest.raises(DataError, match="unequal lengths"):
        TimeSeries(
            name="x",
            column_names=["a", "b"],
            columns={"a": np.ones(3), "b": np.ones(2)},
            target="a",
        )
    with pytest.raises(DataError, match="unknown target"):
        TimeSeries(name="x", column_names=["a"], columns={"a": np.ones(3)}, target="b")


def test_timeseries_arrays_are_read_only():
    series = TimeSeries(
        name="x", column_names=["a"], columns={"a": np.ones(3)}, target="a"
    )
    with pytest.raises(ValueError):
        series.target_values[0] = 5.0


def test_scaler_round_trip_identity():
    rng = random.Random(42)
    for _ in range(50):
        values = np.array([rng.uniform(-50, 50) for _ in range(rng.randint(2, 40))])
        scaler = fit_scaler(values)
        back = invert_scaler(scaler, scaler.apply(values))
        assert np.max(np.abs(back - values)) <= 1e-12


def test_scaler_population_std_and_unit_interval():
    scaler = fit_scaler([0.0, 2.0])
    assert scaler.mean == 1.0
    assert scaler.std == 1.0  # population std, divisor n
    assert scaler.apply([0.0, 2.0]).tolist() == [-1.0, 1.0]


def test_scaler_degenerate_centers_only():
    scaler = fit_scaler([3.0, 3.0, 3.0])
    assert scaler.degenerate
    out = scaler.apply([3.0, 4.0])
    assert out.tolist() == [0.0, 1.0]
    assert invert_scaler(scaler, out).tolist() == [3.0, 4.0]


def test_fit_scaler_rejects_empty():
    with pytest.raises(ValueError):
        fit_scaler([])
    with pytest.raises(ValueError):
        Scaler(mean=0.0, std=-1.0)


def _series(n, seed=0):
    rng = np.random.default_rng(seed)
    return TimeSeries(
        name="s",
        column_names=["v"],
        columns={"v": rng.normal(size=n) * 3 + 7},
        target="v",
    )


def test_split_unscaled_concat_recovers_original():
    series = _series(101)
    train, test = split(series, 0.7, scale=False)
    assert len(train) == 70  # floor(101 * 0.7)
    assert len(test) == 31
    joined = np.concatenate([train.target_values, test.target_values])
    assert np.array_equal(joined, series.target_values)


def test_split_scales_with_train_statistics_only():
    series = _series(200, seed=3)
    train, test = split(series, 0.5, scale=True)
    scaler = train.target_scaler
    assert scaler is not None and test.target_scaler == scaler
    raw_train = series.target_values[:100]
    assert abs(scaler.mean - float(np.mean(raw_train))) <= 1e-12
    assert abs(scaler.std - float(np.std(raw_train))) <= 1e-12
    # train part is standardized; the test part keeps the train transform
    assert abs(float(np.mean(train.target_values))) <= 1e-12
    expected_test = (series.target_values[100:] - scaler.mean) / scaler.std
    assert np.max(np.abs(test.target_values - expected_test)) <= 1e-12


def test_split_rejects_bad_fractions():
    series = _series(10)
    for bad in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            split(series, bad)
    with pytest.raises(ValueError):
        split(_series(2), 0.01)  # empty train part


def test_window_at_origin_semantics():
    values = np.arange(20, dtype=float)
    pair = window_at(values, t=10, context_length=4, horizon=3)
    assert pair.context.tolist() == [6.0, 7.0, 8.0, 9.0]
    assert pair.truth.tolist() == [10.0, 11.0, 12.0]
    assert pair.origin == 10


def test_window_at_bounds():
    values = np.arange(10, dtype=float)
    with pytest.raises(ValueError):
        window_at(values, t=2, context_length=3, horizon=1)
    with pytest.raises(ValueError):
        window_at(values, t=9, context_length=3, horizon=2)
    with pytest.raises(ValueError):
        window_at(values, t=5, context_length=1, horizon=1)
    with pytest.raises(ValueError):
        window_at(values, t=5, context_length=2, horizon=0)


def test_window_pair_is_read_only():
    pair = WindowPair(context=np.ones(3), truth=np.ones(2), origin=3)
    with pytest.raises(ValueError):
        pair.context[0] = 9.0


def test_mae_matches_hand_computation():
    assert mae([1.0, 2.0, 3.0], [2.0, 2.0, 1.0]) == pytest.approx(1.0)
    assert mae([5.0], [5.0]) == 0.0


def test_mae_rejects_mismatch_and_empty():
    with pytest.raises(ValueError):
        mae([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        mae([], [])
