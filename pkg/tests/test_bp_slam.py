import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrslam.association import run_messages
from nrslam.bp_slam import (BpConfig, CrowdTrack, Feature, ImuSample, ResampleCollapse, SlamState, UeState,
                            associate, birth_features, estimate, init_state, likelihood_matrix,
                            measurement_likelihood, propagate_imu, propagate_ncv, prune, restore,
                            run_crowdsourced, snapshot, step, survival_predict, track_rngs, update_legacy)
from nrslam.geometry import Point2, Wall, mirror_anchor, predicted_angles_many, wrap_angle

PA = np.array([0.0, 0.0])
VA = mirror_anchor(Point2(0, 0), Wall(Point2(-20, 4), Point2(20, 4))).array()  # (0, 8)


def _cfg(**kw):
    kw.setdefault("n_particles", 500)
    kw.setdefault("dt", 1.0)
    return BpConfig(**kw)


def _angles(kind, feat, ue):
    d, a, _ = predicted_angles_many(kind, feat, PA, np.asarray(ue, dtype=float))
    return np.array([float(d), float(a)])


def _va_feature(n, pos=VA, r=0.9, spread=0.0, rng=None):
    parts = np.tile(pos, (n, 1))
    if spread:
        parts = parts + spread * rng.standard_normal((n, 2))
    return Feature("VA", parts, np.full(n, 1.0 / n), r, 1, 0)


# ---------------------------------------------------------------- motion

def test_ncv_examples():
    u = propagate_ncv(UeState(Point2(0, 0), (1.0, 0.0)), 1.0)
    assert (u.position.x, u.position.y, *u.velocity) == (1.0, 0.0, 1.0, 0.0)
    u = propagate_ncv(UeState(Point2(2, 3), (0.0, 0.0)), 0.5)
    assert (u.position.x, u.position.y) == (2.0, 3.0)


def test_ncv_ensemble_mean():
    rng = np.random.default_rng(0)
    x0 = np.array([1.0, -2.0, 0.3, 0.7])
    out = propagate_ncv(np.tile(x0, (100_000, 1)), 1.0, 0.5, rng)
    expect = np.array([1.3, -1.3, 0.3, 0.7])
    se = out.std(axis=0) / math.sqrt(len(out))
    assert np.all(np.abs(out.mean(axis=0) - expect) < 3 * se)
    # position and velocity spreads follow B B^T with B = (dt^2/2, dt)
    assert out[:, 0].std() == pytest.approx(0.5 * 0.5, rel=0.02)
    assert out[:, 2].std() == pytest.approx(0.5, rel=0.02)


def test_imu_examples():
    u = propagate_imu(UeState(Point2(0, 0), (0.0, 0.0)), ImuSample((1.0, 0.0)), 1.0)
    assert (u.position.x, u.position.y, *u.velocity) == (0.5, 0.0, 1.0, 0.0)
    a = propagate_imu(UeState(Point2(1, 2), (0.3, 0.1)), ImuSample((0.0, 0.0)), 0.7)
    b = propagate_ncv(UeState(Point2(1, 2), (0.3, 0.1)), 0.7)
    assert a == b


def test_imu_constant_acceleration_kinematics():
    u = UeState(Point2(1, 1), (0.5, -0.2))
    acc = (0.2, 0.1)
    dt, k = 0.5, 12
    for _ in range(k):
        u = propagate_imu(u, ImuSample(acc), dt)
    T = dt * k
    assert u.position.x == pytest.approx(1 + 0.5 * T + 0.5 * acc[0] * T ** 2)
    assert u.position.y == pytest.approx(1 - 0.2 * T + 0.5 * acc[1] * T ** 2)
    assert u.velocity == pytest.approx((0.5 + acc[0] * T, -0.2 + acc[1] * T))


def test_dt_must_be_positive():
    with pytest.raises(ValueError):
        propagate_ncv(UeState(Point2(0, 0), (0, 0)), 0.0)


# ------------------------------------------------------------ existence

def test_survival_examples():
    cfg = _cfg()
    f = _va_feature(4, r=1.0)
    assert survival_predict(f, cfg).existence == pytest.approx(0.999)
    f0 = _va_feature(4, r=0.0)
    assert survival_predict(f0, cfg).existence == 0.0


def test_existence_decay_without_detections():
    cfg = _cfg(n_particles=50, regularization_std=0.0)
    st = init_state(UeState(Point2(3, -2), (0.0, 0.0)), [PA], cfg)
    st.features.append(_va_feature(50, r=0.8))
    st.next_id = 2
    rng = np.random.default_rng(1)
    r = {0: 1.0, 1: 0.8}
    for _ in range(5):
        st = step(st, np.zeros((0, 2)), None, cfg, rng, [PA])
        for k in r:
            # hand recursion: survive, then a certain miss
            q = cfg.p_survive * r[k]
            r[k] = 1.0 if q == 1 else q * (1 - cfg.p_detect) / (q * (1 - cfg.p_detect) + 1 - q)
        got = {f.id: f.existence for f in st.features}
        for k in r:
            if r[k] >= cfg.prune_threshold:
                assert got[k] == pytest.approx(r[k], rel=1e-12)


def test_update_with_all_mass_on_miss():
    cfg = _cfg()
    f = _va_feature(10, r=0.6)
    L = np.ones((2, 10))
    g, _ = update_legacy(f, L, np.zeros(2), cfg)
    S = 1 - cfg.p_detect
    assert g.existence == pytest.approx(0.6 * S / (0.6 * S + 0.4))
    assert g.existence < 0.6
    assert np.array_equal(g.particles, f.particles)


def test_update_with_matching_measurement_raises_existence():
    cfg = _cfg()
    ue = np.tile([3.0, -2.0], (10, 1))
    f = _va_feature(10, r=0.6)
    z = _angles("VA", VA, ue[0])[None, :]
    L = likelihood_matrix(z, "VA", f.particles, PA, ue, cfg.angle_sigma)
    g, _ = update_legacy(f, L, np.ones(1), cfg)
    assert g.existence > 0.99


def test_symmetric_update_keeps_mean():
    cfg = _cfg()
    rng = np.random.default_rng(2)
    half = rng.standard_normal((50, 2))
    parts = VA + np.vstack([half, -half])
    f = Feature("VA", parts, np.full(100, 0.01), 0.7, 1, 0)
    d = np.hypot(*(parts - VA).T)
    L = np.exp(-d ** 2)[None, :]
    g, _ = update_legacy(f, L, np.ones(1), cfg)
    assert g.mean() == pytest.approx(VA, abs=1e-12)


# ------------------------------------------------------------ likelihood

def test_likelihood_peak_and_one_sigma():
    s = math.radians(6)
    ue = UeState(Point2(3, -2), (0, 0))
    z = _angles("VA", VA, (3, -2))
    peak = measurement_likelihood(z, ue, "VA", Point2(*VA), Point2(0, 0), s)
    assert peak == pytest.approx(1 / (2 * math.pi * s * s), rel=1e-12)
    off = measurement_likelihood(z + s, ue, "VA", Point2(*VA), Point2(0, 0), s)
    assert off == pytest.approx(peak * math.exp(-1), rel=1e-12)


def test_likelihood_zero_beyond_the_wall():
    # UE on the far side of the PA-VA bisector has no bounce path
    ue = UeState(Point2(3, 5), (0, 0))
    assert measurement_likelihood(np.zeros(2), ue, "VA", Point2(*VA), Point2(0, 0), 0.1) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi),
       st.floats(-math.pi, math.pi))
def test_likelihood_rotation_invariance(rot, ux, uy, dz0, dz1):
    c, s = math.cos(rot), math.sin(rot)
    Rm = np.array([[c, -s], [s, c]])
    ue = np.array([ux, uy - 3.0])
    pa = np.array([0.5, 0.2])
    va = np.array([0.5, 7.8])
    z = np.array([[dz0, dz1]])
    L0 = likelihood_matrix(z, "VA", va[None], pa, ue[None], 0.2)
    L1 = likelihood_matrix(wrap_angle(z + rot), "VA", (Rm @ va)[None], Rm @ pa, (Rm @ ue)[None], 0.2)
    assert L1 == pytest.approx(L0, rel=1e-7, abs=1e-300)


# ----------------------------------------------------------- association

def test_associate_single_matching_measurement():
    cfg = _cfg(n_particles=20)
    ue = np.tile([3.0, -2.0, 0, 0], (20, 1))
    f = _va_feature(20, r=0.99)
    z = _angles("VA", VA, (3, -2))[None, :]
    b = associate([f], z, ue, cfg, [PA])
    assert b.feature_to_meas[0, 1] > 0.99
    assert b.feature_to_meas[0, 0] < 0.01


# ----------------------------------------------------------------- birth

def test_explained_measurement_spawns_nothing():
    cfg = _cfg(n_particles=20)
    z = np.array([[0.5, 1.0]])
    belief = run_messages(np.array([[1e6]]), np.array([1.0 + cfg.mu_new / cfg.mu_false]))
    out = birth_features(z, belief, np.tile([3.0, -2.0, 0, 0], (20, 1)), PA, cfg, np.random.default_rng(0), 1, 5)
    assert out == []


def test_birth_without_jitter_lands_on_the_va():
    cfg = _cfg(n_particles=50, birth_angle_sigma=1e-12)
    z = _angles("VA", VA, (3, -2))[None, :]
    belief = run_messages(np.zeros((0, 1)), np.array([1.0 + cfg.mu_new / cfg.mu_false]))
    out = birth_features(z, belief, np.tile([3.0, -2.0, 0, 0], (50, 1)), PA, cfg, np.random.default_rng(0), 1, 5)
    assert len(out) == 1
    assert out[0].mean() == pytest.approx(VA, abs=1e-6)
    assert out[0].id == 5 and out[0].birth_time == 1
    assert out[0].existence < 1e-4 < cfg.detect_threshold


# ------------------------------------------------------------- estimates

def test_estimate_examples():
    cfg = _cfg(n_particles=4)
    st = SlamState(np.tile([3.0, 4.0, 0, 0], (4, 1)), np.full(4, 0.25),
                   [_va_feature(4, r=0.49), Feature("VA", np.tile([1.0, 9.0], (4, 1)), np.full(4, 0.25), 0.51, 2, 0)])
    e = estimate(st, cfg, [PA])
    assert (e.ue.position.x, e.ue.position.y) == (3.0, 4.0)
    assert [fid for fid, _, _ in e.features] == [2]
    assert [fid for fid, _ in e.rsps] == [2]


def test_estimate_is_the_weighted_mean():
    cfg = _cfg(n_particles=6)
    parts = np.array([[0, 0, 0, 0]] * 3 + [[4, 2, 0, 0]] * 3, dtype=float)
    w = np.array([0.1, 0.1, 0.1, 0.3, 0.2, 0.2])
    e = estimate(SlamState(parts, w, []), cfg, [PA])
    direct = sum(wi * p for wi, p in zip(w, parts))
    assert (e.ue.position.x, e.ue.position.y) == pytest.approx(tuple(direct[:2]))


def test_prune_examples():
    cfg = _cfg()
    st = SlamState(np.zeros((1, 4)), np.ones(1), [_va_feature(2, r=1e-5), Feature("PA", np.zeros((2, 2)),
                                                                                     np.full(2, .5), 1.0, 0, 0)])
    once = prune(st, cfg)
    assert [f.id for f in once.features] == [0]
    assert [f.id for f in prune(once, cfg).features] == [0]


# ------------------------------------------------------------------ step

def _scene_measurements(ue):
    return np.array([_angles("PA", PA, ue), _angles("VA", VA, ue)])


def test_step_without_measurements_spreads_the_ue():
    cfg = _cfg(n_particles=2000)
    st = init_state(UeState(Point2(3, -2), (0.5, 0.0)), [PA], cfg)
    rng = np.random.default_rng(3)
    spreads, existence = [], []
    for _ in range(3):
        st = step(st, np.zeros((0, 2)), None, cfg, rng, [PA])
        spreads.append(st.ue_particles[:, :2].std(axis=0).sum())
        existence.append(st.features[0].existence)
    assert spreads[0] < spreads[1] < spreads[2]
    assert 1.0 > existence[0] > existence[1] > existence[2]


def test_step_is_deterministic():
    cfg = _cfg(n_particles=300)
    outs = []
    for _ in range(2):
        st = init_state(UeState(Point2(3, -2), (0.5, 0.0)), [PA], cfg)
        rng = np.random.default_rng(7)
        for t in range(1, 6):
            st = step(st, _scene_measurements((3 + 0.5 * t, -2)), None, cfg, rng, [PA])
        outs.append(st)
    assert np.array_equal(outs[0].ue_particles, outs[1].ue_particles)
    assert [f.existence for f in outs[0].features] == [f.existence for f in outs[1].features]
    for a, b in zip(outs[0].features, outs[1].features):
        assert np.array_equal(a.particles, b.particles)


def test_noiseless_angles_converge_to_the_va():
    sigma = math.radians(1)
    cfg = _cfg(n_particles=2000, angle_sigma=sigma, driving_variance=1e-4, mu_new=1e-2)
    st = init_state(UeState(Point2(3, -2), (0.5, 0.0)), [PA], cfg)
    rng = np.random.default_rng(0)
    for t in range(1, 21):
        ue = (3 + 0.5 * t, -2.0)
        st = step(st, _scene_measurements(ue), None, cfg, rng, [PA])
    e = estimate(st, cfg, [PA])
    vas = [p for fid, p, _ in e.features if e.kinds[fid] == "VA"]
    assert len(vas) == 1
    # one noiseless bearing pins the VA to within range * sigma
    floor = math.dist(ue, VA) * sigma
    assert math.dist(tuple(vas[0]), VA) < floor


def test_collapse_raises():
    cfg = _cfg(n_particles=10, p_detect=1.0, p_survive=1.0, angle_sigma=math.radians(0.5))
    st = init_state(UeState(Point2(3, -2), (0.0, 0.0)), [PA], cfg)
    z = _angles("PA", PA, (3, -2)) + math.pi
    with pytest.raises(ResampleCollapse):
        step(st, wrap_angle(z)[None, :], None, cfg, np.random.default_rng(0), [PA])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_weights_and_existence_stay_valid(seed, n_steps):
    rng = np.random.default_rng(seed)
    cfg = _cfg(n_particles=64, pairings=int(rng.integers(1, 3)), maneuver_prob=0.2, maneuver_variance=1.0)
    st = init_state(UeState(Point2(3, -2), (0.5, 0.0)), [PA], cfg)
    for _ in range(n_steps):
        z = wrap_angle(rng.uniform(-math.pi, math.pi, (int(rng.integers(0, 4)), 2)))
        st = step(st, z, None, cfg, rng, [PA])
        assert st.ue_weights.sum() == pytest.approx(1.0, abs=1e-9)
        for f in st.features:
            assert f.weights.sum() == pytest.approx(1.0, abs=1e-9)
            assert 0.0 <= f.existence <= 1.0
        assert len({f.id for f in st.features}) == len(st.features)


# ---------------------------------------------------------- persistence

def test_snapshot_round_trip():
    cfg = _cfg(n_particles=100)
    st = init_state(UeState(Point2(3, -2), (0.5, 0.0)), [PA], cfg)
    rng = np.random.default_rng(4)
    for t in range(1, 4):
        st = step(st, _scene_measurements((3 + 0.5 * t, -2)), None, cfg, rng, [PA])
    snap = json.loads(json.dumps(snapshot(st, cfg, [PA], include_particles=True)))
    back = restore(snap, cfg)
    assert np.array_equal(back.ue_particles, st.ue_particles)
    assert back.step == st.step and back.next_id == st.next_id
    for a, b in zip(back.features, st.features):
        assert np.array_equal(a.particles, b.particles)
        assert (a.id, a.kind, a.existence) == (b.id, b.kind, b.existence)
    summary = restore(json.loads(json.dumps(snapshot(st, cfg, [PA]))), cfg)
    for a, b in zip(summary.features, st.features):
        # resampled from the stored moments: agree within sampling error
        d = b.particles - b.mean()
        se = np.sqrt(np.diag((b.weights[:, None] * d).T @ d) / cfg.n_particles)
        assert np.all(np.abs(a.mean() - b.mean()) <= 4 * se + 1e-9)


# ------------------------------------------------------------ config

@pytest.mark.parametrize("kw", [dict(p_detect=0.0), dict(p_survive=1.5), dict(n_particles=0),
                                dict(angle_sigma=0.0), dict(prune_threshold=1.0), dict(pairings=0),
                                dict(maneuver_prob=1.0), dict(driving_variance=-1.0), dict(bp_damping=1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        BpConfig(**kw)


def test_feature_validation():
    with pytest.raises(ValueError):
        Feature("XA", np.zeros((1, 2)), np.ones(1), 0.5, 0, 0)
    with pytest.raises(ValueError):
        Feature("VA", np.zeros((1, 2)), np.ones(1), 1.5, 0, 0)


# ------------------------------------------------------------- crowd

def test_single_track_crowd_equals_step_loop():
    cfg = _cfg(n_particles=200)
    meas = {t: _scene_measurements((3 + 0.5 * t, -2)) for t in range(1, 7)}
    start = UeState(Point2(3.5, -2), (0.5, 0.0))
    res = run_crowdsourced([CrowdTrack(start, 1, meas)], cfg, [PA], 6, seed=11)[0]
    rng = track_rngs(11, 1)[0]
    st = init_state(start, [PA], cfg)
    for t in range(1, 7):
        st = step(st, meas[t], None, cfg, rng, [PA], predict_ue=t > 1)
        e = estimate(st, cfg, [PA])
        r = res[t - 1]
        assert (e.ue.position.x, e.ue.position.y) == (r.ue.position.x, r.ue.position.y)
        assert [(i, tuple(p)) for i, p, _ in e.features] == [(i, tuple(p)) for i, p, _ in r.features]


def test_late_entrant_inherits_the_map():
    cfg = _cfg(n_particles=200)
    a = {t: _scene_measurements((3 + 0.5 * t, -2)) for t in range(1, 9)}
    b = {t: _scene_measurements((-3 + 0.3 * t, -1)) for t in range(5, 9)}
    tracks = [CrowdTrack(UeState(Point2(3.5, -2), (0.5, 0)), 1, a),
              CrowdTrack(UeState(Point2(-1.5, -1), (0.3, 0)), 5, b)]
    res = run_crowdsourced(tracks, cfg, [PA], 8, seed=2)
    assert len(res[0]) == 8 and len(res[1]) == 4
    # the newcomer sees at least the map the first UE had built before it entered
    assert len(res[1][0].features) >= len(res[0][3].features)


def test_crowd_requires_sorted_entries():
    t1 = CrowdTrack(UeState(Point2(0, 0), (0, 0)), 3, {})
    t2 = CrowdTrack(UeState(Point2(0, 0), (0, 0)), 1, {})
    with pytest.raises(ValueError):
        run_crowdsourced([t1, t2], _cfg(), [PA], 3)
