import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrslam.metrics import (MatchLevel, OspaConfig, mae_per_feature, nearest_estimate_error, ospa, position_error, specular_match,
                            write_feature_csv, write_metrics_csv)

from oracles import ospa_brute_force

pts = st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), max_size=4)


def test_position_error_examples():
    track = [(0, 0), (1, 2), (3, 1)]
    err, mean = position_error(track, track)
    assert np.all(err == 0) and mean == 0
    err, mean = position_error([(x + 1, y) for x, y in track], track)
    assert err == pytest.approx([1, 1, 1]) and mean == pytest.approx(1)


def test_position_error_direct_sum():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
    err, mean = position_error(a, b)
    direct = [math.dist(p, q) for p, q in zip(a, b)]
    assert err == pytest.approx(direct) and mean == pytest.approx(sum(direct) / 30)


def test_position_error_length_mismatch():
    with pytest.raises(ValueError):
        position_error([(0, 0)], [(0, 0), (1, 1)])


def test_ospa_basics():
    X = [(0, 0), (3, 4)]
    assert ospa(X, X) == 0
    assert ospa([], [(1, 1), (2, 2)], OspaConfig(10, 1)) == 10
    assert ospa([], []) == 0


def test_ospa_matches_permutation_search():
    rng = np.random.default_rng(1)
    for _ in range(50):
        X, Y = rng.uniform(-5, 5, (3, 2)), rng.uniform(-5, 5, (3, 2))
        for p in (1, 2):
            cfg = OspaConfig(4.0, p)
            assert ospa(X, Y, cfg) == pytest.approx(ospa_brute_force(X, Y, 4.0, p), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(pts, pts)
def test_ospa_against_brute_force_any_sizes(X, Y):
    cfg = OspaConfig(10.0, 1.0)
    assert ospa(X, Y, cfg) == pytest.approx(ospa_brute_force(X, Y, 10.0, 1.0), rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(pts, pts, pts)
def test_ospa_is_a_metric(X, Y, Z):
    cfg = OspaConfig(10.0, 1.0)
    assert ospa(X, Y, cfg) == pytest.approx(ospa(Y, X, cfg))
    assert ospa(X, X, cfg) == 0
    assert ospa(X, Z, cfg) <= ospa(X, Y, cfg) + ospa(Y, Z, cfg) + 1e-9


@settings(max_examples=100, deadline=None)
@given(pts, pts, st.floats(0.1, 10), st.floats(0, 10))
def test_ospa_monotone_in_cutoff(X, Y, c, extra):
    if len(X) == len(Y):
        return
    assert ospa(X, Y, OspaConfig(c + extra)) >= ospa(X, Y, OspaConfig(c)) - 1e-12


def test_ospa_config_validation():
    with pytest.raises(ValueError):
        OspaConfig(cutoff=0)
    with pytest.raises(ValueError):
        OspaConfig(order=0.5)


def test_mae_examples():
    truth = [(0, 0), (10, 0)]
    res = mae_per_feature([[(0, 0), (10, 0)]] * 3, truth)
    assert [r.mae for r in res] == [0, 0] and [r.detect_rate for r in res] == [1, 1]
    res = mae_per_feature([[(0.1, 0)], [(0.2, 0)], []], truth)
    assert res[0].mae == pytest.approx(0.15) and res[0].detect_rate == pytest.approx(2 / 3)
    assert math.isnan(res[1].mae) and not res[1].detected


def test_mae_drifting_estimate():
    truth = [(2.0, 3.0)]
    series = [[(2.0 + 0.1 * t, 3.0 - 0.05 * t)] for t in range(20)]
    expect = np.mean([math.hypot(0.1 * t, 0.05 * t) for t in range(20)])
    assert mae_per_feature(series, truth)[0].mae == pytest.approx(expect)


def test_mae_gate_and_nearest_assignment():
    truth = [(0, 0), (5, 0)]
    res = mae_per_feature([[(4.0, 0), (20, 20)]], truth, gate=3.0)
    assert math.isnan(res[0].mae)
    assert res[1].mae == pytest.approx(1.0)


def test_nearest_estimate_error():
    series = [[(0, 3.0), (9, 9)], [], [(0, 1.0)]]
    assert nearest_estimate_error(series, (0, 0)) == pytest.approx(2.0)
    assert math.isnan(nearest_estimate_error([[], []], (0, 0)))
    # a feature outside the MAE gate still counts here
    assert math.isnan(mae_per_feature([[(0, 4.0)]], [(0, 0)])[0].mae)
    assert nearest_estimate_error([[(0, 4.0)]], (0, 0)) == pytest.approx(4.0)


def test_specular_match_examples():
    r = math.radians
    assert specular_match((r(3), r(5)), (0, 0)) == MatchLevel.HIGH
    assert specular_match((r(7), r(2)), (0, 0)) == MatchLevel.MEDIUM
    assert specular_match((0, 0), (0, 0)) == MatchLevel.HIGH
    assert specular_match((r(9.5), 0), (0, 0)) == MatchLevel.LOW


@settings(max_examples=200)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-4, 4), st.floats(-4, 4), st.integers(-2, 2))
def test_specular_match_symmetry_and_periodicity(a, b, c, d, k):
    assert specular_match((a, b), (c, d)) == specular_match((c, d), (a, b))
    assert specular_match((a + 2 * math.pi * k, b), (c, d)) == specular_match((a, b), (c, d))


def test_csv_writers(tmp_path):
    write_metrics_csv(tmp_path / "m.csv", [0.5, 0.25], [1.0, 2.0])
    assert (tmp_path / "m.csv").read_text().splitlines() == ["step,pos_err_m,ospa_m", "1,0.5,1.0", "2,0.25,2.0"]
    write_feature_csv(tmp_path / "f.csv", mae_per_feature([[(0, 0)]], [(0, 0)]))
    assert (tmp_path / "f.csv").read_text().splitlines() == ["va_id,mae_m,detect_rate", "0,0.0,1.0"]
