from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sedgpe.exceptions import InsufficientData, InvalidInput, ParseError, SchemaError
from sedgpe.fixtures import TURBINES, january_days
from sedgpe.wind import (
    CSV_COLUMNS,
    PowerCurveTree,
    WindFieldMatrix,
    WindFieldRecord,
    fit_power_curve,
    hourly_farm_average,
    ingest_csv,
    predict_power,
    write_csv,
)

HEADER = ",".join(CSV_COLUMNS) + "\n"


def day_records(day, speeds, farm="F", turbine="T1"):
    return [WindFieldRecord(day + timedelta(hours=h), farm, turbine, float(s), 0.5)
            for h, s in enumerate(speeds)]


# --- ingest_csv ------------------------------------------------------------

def test_ingest_three_rows(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text(HEADER + "2004-01-01T00:00:00,F,T1,5.0,0.3\n"
                    "2004-01-01T01:00:00,F,T1,6.0,0.4\n2004-01-01T02:00:00,F,T2,7.5,0.9\n")
    recs = ingest_csv(path)
    assert len(recs) == 3
    assert recs[2] == WindFieldRecord(datetime(2004, 1, 1, 2), "F", "T2", 7.5, 0.9)


def test_ingest_negative_speed_reports_line(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text(HEADER + "2004-01-01T00:00:00,F,T1,5.0,0.3\n2004-01-01T01:00:00,F,T1,-1.0,0.4\n")
    with pytest.raises(ParseError) as err:
        ingest_csv(path)
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_ingest_unparseable_value(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text(HEADER + "2004-01-01T00:00:00,F,T1,fast,0.3\n")
    with pytest.raises(ParseError) as err:
        ingest_csv(path)
    assert err.value.line == 2


def test_ingest_missing_column(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("timestamp,farm_id,turbine_id,speed_mps\n2004-01-01T00:00:00,F,T1,5\n")
    with pytest.raises(SchemaError, match="power_mw"):
        ingest_csv(path)


def test_ingest_columns_any_order(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("power_mw,speed_mps,turbine_id,farm_id,timestamp\n0.2,4.0,T,F,2004-01-01T05:00:00\n")
    (rec,) = ingest_csv(path)
    assert (rec.speed, rec.power, rec.timestamp.hour) == (4.0, 0.2, 5)


def test_ingest_bundled_fixture_count(wind_paths):
    for path in wind_paths:
        assert len(ingest_csv(path)) == 93 * 24 * TURBINES


def test_write_then_ingest_roundtrip(tmp_path):
    recs = day_records(datetime(2005, 1, 3), np.linspace(1, 10, 24))
    write_csv(tmp_path / "r.csv", recs)
    back = ingest_csv(tmp_path / "r.csv")
    assert [r.timestamp for r in back] == [r.timestamp for r in recs]
    np.testing.assert_allclose([r.speed for r in back], [r.speed for r in recs], atol=1e-4)


# --- hourly_farm_average ------------------------------------------------------

def test_hourly_constant_speed():
    speed, power = hourly_farm_average(day_records(datetime(2004, 1, 1), [5.0] * 24))
    assert speed.values.shape == (1, 24)
    assert np.all(speed.values == 5.0)
    assert np.all(power.values == 0.5)


def test_hourly_two_turbine_mean():
    day = datetime(2004, 1, 1)
    recs = day_records(day, [4.0] * 24, turbine="A") + day_records(day, [6.0] * 24, turbine="B")
    speed, _ = hourly_farm_average(recs)
    assert np.all(speed.values == 5.0)


def test_hourly_drops_incomplete_day():
    days = january_days((2004,))[:3]
    recs = []
    for d in days:
        recs += day_records(d, np.arange(24.0))
    recs = [r for r in recs if not (r.timestamp.day == 2 and r.timestamp.hour == 7)]
    speed, power = hourly_farm_average(recs)
    assert speed.days == ("2004-01-01", "2004-01-03")
    assert speed.dropped_days == ("2004-01-02",) == power.dropped_days


def test_hourly_subhour_samples_are_averaged():
    day = datetime(2004, 1, 1)
    recs = day_records(day, [2.0] * 24)
    recs += [WindFieldRecord(day + timedelta(hours=h, minutes=30), "F", "T1", 4.0, 0.5) for h in range(24)]
    speed, _ = hourly_farm_average(recs)
    assert np.all(speed.values == 3.0)


def test_hourly_no_complete_day():
    with pytest.raises(InsufficientData):
        hourly_farm_average(day_records(datetime(2004, 1, 1), [1.0] * 23))


def test_hourly_rejects_mixed_farms():
    day = datetime(2004, 1, 1)
    with pytest.raises(InvalidInput):
        hourly_farm_average(day_records(day, [1.0] * 24, farm="A") + day_records(day, [1.0] * 24, farm="B"))


@given(st.permutations(list(range(48))))
@settings(max_examples=25, deadline=None)
def test_hourly_order_invariant(perm):
    rng = np.random.default_rng(0)
    day = datetime(2004, 1, 1)
    recs = day_records(day, rng.uniform(0, 10, 24), turbine="A") + day_records(day, rng.uniform(0, 10, 24), turbine="B")
    a, _ = hourly_farm_average(recs)
    b, _ = hourly_farm_average([recs[i] for i in perm])
    np.testing.assert_array_equal(a.values, b.values)


def test_field_matrix_validation_and_roundtrip():
    with pytest.raises(InvalidInput):
        WindFieldMatrix("F", "speed", ["d"], np.ones((1, 23)))
    with pytest.raises(InvalidInput):
        WindFieldMatrix("F", "speed", ["d"], np.full((1, 24), np.nan))
    m = WindFieldMatrix("F", "speed", ["d1", "d2"], np.arange(48.0).reshape(2, 24), ["d3"])
    back = WindFieldMatrix.from_dict(m.to_dict())
    assert back.days == m.days and back.dropped_days == m.dropped_days
    np.testing.assert_array_equal(back.values, m.values)


# --- power curve tree ------------------------------------------------------------

def test_tree_separable_single_split():
    tree = fit_power_curve([1, 2, 8, 9], [0, 0, 10, 10], max_depth=1, min_leaf_count=1)
    assert tree.n_leaves_ == 2
    assert 2 < tree.thresholds_[0] < 8
    assert sorted(tree.leaf_values()) == [0, 10]
    assert predict_power(tree, 1.5) == 0
    assert predict_power(tree, 8.5) == 10


def test_tree_constant_target_single_leaf():
    tree = fit_power_curve(np.arange(20.0), np.full(20, 0.7))
    assert tree.n_leaves_ == 1
    np.testing.assert_allclose(tree.predict([0.0, 50.0]), 0.7, rtol=1e-14)


def logistic_data(rng, n=200):
    x = rng.uniform(0, 20, n)
    y = 1.5 / (1 + np.exp(-(x - 9))) + 0.02 * rng.standard_normal(n)
    return x, np.clip(y, 0, None)


def best_stump_rmse(x, y, min_leaf):
    order = np.argsort(x)
    x, y = x[order], y[order]
    best = np.sum((y - y.mean()) ** 2)
    for k in range(min_leaf, x.size - min_leaf + 1):
        if x[k - 1] == x[k]:
            continue
        sse = np.sum((y[:k] - y[:k].mean()) ** 2) + np.sum((y[k:] - y[k:].mean()) ** 2)
        best = min(best, sse)
    return np.sqrt(best / x.size)


def test_tree_depth6_beats_best_stump(rng):
    x, y = logistic_data(rng)
    tree = fit_power_curve(x, y, max_depth=6, min_leaf_count=5)
    rmse = np.sqrt(tree.sse(x, y) / x.size)
    assert rmse <= best_stump_rmse(x, y, 5) + 1e-12


def test_tree_depth1_equals_exhaustive_stump(rng):
    x, y = logistic_data(rng)
    tree = fit_power_curve(x, y, max_depth=1, min_leaf_count=5)
    assert np.sqrt(tree.sse(x, y) / x.size) == pytest.approx(best_stump_rmse(x, y, 5), rel=1e-10)


def test_tree_leaf_values_are_means(rng):
    x, y = logistic_data(rng)
    tree = fit_power_curve(x, y, max_depth=3, min_leaf_count=5)
    pred = tree.predict(x)
    for v in np.unique(pred):
        assert v == pytest.approx(y[pred == v].mean(), rel=1e-12)


def test_tree_length_mismatch():
    with pytest.raises(InvalidInput):
        fit_power_curve([1, 2, 3], [1, 2])


def test_tree_serialization_roundtrip(rng):
    x, y = logistic_data(rng)
    tree = fit_power_curve(x, y)
    back = PowerCurveTree.from_dict(tree.to_dict())
    grid = np.linspace(-5, 30, 500)
    np.testing.assert_array_equal(back.predict(grid), tree.predict(grid))


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30))
@settings(max_examples=50, deadline=None)
def test_tree_output_range(speeds):
    x, y = logistic_data(np.random.default_rng(1))
    tree = fit_power_curve(x, y)
    out = tree.predict(np.array(speeds))
    leaves = tree.leaf_values()
    assert np.all(out >= max(leaves.min(), 0.0)) and np.all(out <= min(leaves.max(), tree.max_power_))


def test_tree_step_function_distinct_values(rng):
    x, y = logistic_data(rng)
    tree = fit_power_curve(x, y)
    out = tree.predict(np.linspace(-5, 30, 5000))
    assert np.unique(out).size <= tree.n_leaves_
    assert np.count_nonzero(np.diff(out)) <= tree.n_leaves_ - 1


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_tree_sse_nonincreasing_in_depth(seed):
    x, y = logistic_data(np.random.default_rng(seed), 120)
    sse = [fit_power_curve(x, y, d, 3).sse(x, y) for d in range(0, 7)]
    assert all(b <= a + 1e-9 for a, b in zip(sse, sse[1:]))


def test_tree_sklearn_shape(rng):
    from sklearn.base import clone

    x, y = logistic_data(rng)
    tree = clone(PowerCurveTree(max_depth=4)).fit(x, y)
    assert tree.get_params() == {"max_depth": 4, "min_leaf_count": 5}
    assert tree.score(x, y) > 0.9
