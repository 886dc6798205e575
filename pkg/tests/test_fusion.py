import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cv_F, kf_run
from overtake.fusion import (DEPTH, LIDAR, YOLO, Measurement, OpponentTracker, OutlierRejected,
                             StaleMeasurement, UkfParams, UkfState, compute_rmse, emit_estimate,
                             emission_times, init_from_first_measurement, measurement_model,
                             predict, process_noise, read_estimates, read_measurement_log,
                             repair_cov, run_filter, sigma_points, unscented_transform, update,
                             write_estimates, write_measurement_log)


# --- unscented transform -------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(0, 3), st.floats(-1, 3))
def test_weights_sum_to_one(alpha, beta, kappa):
    p = UkfParams(alpha=alpha, beta=beta, kappa=kappa)
    _, wm, wc = sigma_points(np.zeros(4), np.eye(4), p)
    assert abs(wm.sum() - 1) < 1e-9
    assert len(wm) == len(wc) == 9


def test_sigma_points_identity_alpha_one():
    X, _, _ = sigma_points(np.zeros(4), np.eye(4), UkfParams(alpha=1.0, kappa=0.0))
    assert np.allclose(X[1:5], 2 * np.eye(4)) and np.allclose(X[5:], -2 * np.eye(4))


def test_ut_linear_exact():
    rng = np.random.default_rng(0)
    p = UkfParams()
    for _ in range(20):
        A = rng.normal(size=(3, 4))
        b = rng.normal(size=3)
        m = rng.normal(size=4)
        L = rng.normal(size=(4, 4))
        P = L @ L.T + 0.1 * np.eye(4)
        mu, S, _, _ = unscented_transform(lambda x: A @ x + b, m, P, p)
        assert np.max(np.abs(mu - (A @ m + b))) < 1e-10
        assert np.max(np.abs(S - A @ P @ A.T)) < 1e-10


def test_repair_cov_floors_eigenvalues():
    P = np.diag([1.0, 0.0, -1e-3, 2.0])
    P[0, 1] = 1e-12
    R = repair_cov(P)
    assert np.allclose(R, R.T)
    assert np.linalg.eigvalsh(R).min() >= 1e-9 - 1e-15


# --- predict / models ----------------------------------------------------------

def test_predict_zero_dt_unchanged():
    s = UkfState(np.array([1.0, 2, 3, 4]), np.diag([1.0, 2, 3, 4]), 5.0)
    out = predict(s, 0.0, UkfParams())
    assert np.array_equal(out.mean, s.mean) and np.array_equal(out.cov, s.cov)


def test_predict_constant_velocity():
    s = UkfState(np.array([0.0, 0, 1, 0]), np.eye(4) * 1e-6)
    out = predict(s, 1.0, UkfParams(q_vel=1e-12))
    assert np.allclose(out.mean, [1, 0, 1, 0], atol=1e-12)
    assert out.t == 1.0


def test_predict_matches_kf():
    p = UkfParams(q_pos=0.01)
    rng = np.random.default_rng(1)
    L = rng.normal(size=(4, 4))
    s = UkfState(rng.normal(size=4), L @ L.T + np.eye(4))
    out = predict(s, 0.37, p)
    F = cv_F(0.37)
    assert np.max(np.abs(out.mean - F @ s.mean)) < 1e-10
    assert np.max(np.abs(out.cov - (F @ s.cov @ F.T + process_noise(0.37, p)))) < 1e-10


def test_predict_negative_dt_raises():
    with pytest.raises(ValueError):
        predict(UkfState(np.zeros(4), np.eye(4)), -0.1, UkfParams())


def test_process_noise_blocks():
    Q = process_noise(0.5, UkfParams(q_vel=2.0))
    assert Q[0, 0] == pytest.approx(2 * 0.125 / 3)
    assert Q[0, 2] == pytest.approx(2 * 0.125)
    assert Q[2, 2] == pytest.approx(1.0)
    assert Q[0, 1] == 0.0


def test_measurement_models():
    x = np.array([3.0, 0, 0, 0])
    assert np.allclose(measurement_model(LIDAR, x), [3, 0])
    assert np.allclose(measurement_model(LIDAR, x, (0.2, 0, 0)), [2.8, 0])
    assert np.allclose(measurement_model(DEPTH, np.array([0.0, 2, 0, 0])), [2, math.pi / 2])
    # sensor rotated +90 deg sees a point on world +y straight ahead
    assert np.allclose(measurement_model(YOLO, np.array([0.0, 2, 0, 0]), (0, 0, math.pi / 2)),
                       [2, 0], atol=1e-12)
    with pytest.raises(ValueError):
        measurement_model(DEPTH, np.zeros(4))


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement(0.0, DEPTH, [0.0, 0.1])
    with pytest.raises(ValueError):
        Measurement(0.0, LIDAR, [np.nan, 0.1])
    with pytest.raises(ValueError):
        Measurement(0.0, "radar", [1.0, 0.1])


def test_params_validation():
    with pytest.raises(ValueError):
        UkfParams(alpha=0.0)
    with pytest.raises(np.linalg.LinAlgError):
        UkfParams(R_lidar=np.zeros((2, 2)))


# --- update ------------------------------------------------------------------

def test_zero_innovation_update():
    p = UkfParams()
    s = UkfState(np.array([2.0, 1.0, 0.5, 0.0]), np.eye(4) * 0.5, 1.0)
    out = update(s, Measurement(1.0, LIDAR, [2.0, 1.0]), p)
    assert np.allclose(out.mean, s.mean, atol=1e-12)
    assert out.cov[0, 0] < s.cov[0, 0] and out.cov[1, 1] < s.cov[1, 1]


def test_bearing_innovation_wraps():
    p = UkfParams(outlier_gate=np.inf)
    pred = np.array([3 * math.cos(math.radians(-179)), 3 * math.sin(math.radians(-179)), 0, 0])
    s = UkfState(pred, np.diag([0.01, 0.01, 1, 1]), 0.0)
    out = update(s, Measurement(0.0, DEPTH, [3.0, math.radians(179)]), p)
    # moves a little toward the +179 deg direction (more negative y is wrong)
    bearing = math.atan2(out.mean[1], out.mean[0])
    diff = math.degrees((bearing - math.radians(-179) + math.pi) % (2 * math.pi) - math.pi)
    assert -2.0 <= diff < 0.0
    assert np.linalg.norm(out.mean[:2] - pred[:2]) < 0.2


def test_stale_and_outlier():
    p = UkfParams()
    s = UkfState(np.array([2.0, 0, 0, 0]), np.eye(4) * 0.01, 1.0)
    with pytest.raises(StaleMeasurement):
        update(s, Measurement(0.9, LIDAR, [2.0, 0.0]), p)
    # within the reorder tolerance: fused at filter time
    out = update(s, Measurement(0.96, LIDAR, [2.0, 0.0]), p)
    assert out.t == 1.0
    with pytest.raises(OutlierRejected):
        update(s, Measurement(1.0, LIDAR, [4.0, 0.0]), p)


def test_tracker_counters():
    tr = OpponentTracker()
    assert tr.process(Measurement(1.0, LIDAR, [2.0, 0.0]))
    assert not tr.process(Measurement(0.5, LIDAR, [2.0, 0.0]))
    assert not tr.process(Measurement(1.1, LIDAR, [6.0, 0.0]))
    assert (tr.n_updates, tr.n_stale, tr.n_outliers) == (1, 1, 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([LIDAR, DEPTH, YOLO]), st.floats(0.05, 0.5),
                          st.floats(-0.3, 0.3), st.floats(-0.3, 0.3)), min_size=1, max_size=25))
def test_covariance_stays_psd(seq):
    p = UkfParams()
    s = UkfState(np.array([2.5, 0.0, 0.5, 0.0]), np.diag([0.05, 0.05, 1.0, 1.0]))
    for ch, dt, ex, ey in seq:
        t = s.t + dt
        x, y = 2.5 + ex, ey
        vals = [x, y] if ch == LIDAR else [math.hypot(x, y), math.atan2(y, x)]
        try:
            s = update(s, Measurement(t, ch, vals), p)
        except OutlierRejected:
            s = predict(s, dt, p)
        assert np.allclose(s.cov, s.cov.T, atol=0)
        assert np.linalg.eigvalsh(s.cov).min() >= 1e-9 * (1 - 1e-6)


def test_ukf_matches_kf_200_steps():
    rng = np.random.default_rng(3)
    p = UkfParams(outlier_gate=np.inf, q_pos=0.01)
    x0 = np.array([1.0, -0.5, 0.8, 0.3])
    P0 = np.diag([0.1, 0.1, 1.0, 1.0])
    steps = []
    truth = x0.copy()
    for _ in range(200):
        dt = rng.uniform(0.05, 0.6)
        truth = cv_F(dt) @ truth + rng.multivariate_normal(np.zeros(4), process_noise(dt, p))
        steps.append((dt, truth[:2] + rng.multivariate_normal(np.zeros(2), p.R_lidar)))
    oracle = kf_run(x0, P0, steps, cv_F, lambda dt: process_noise(dt, p), p.R_lidar)
    s = UkfState(x0.copy(), P0.copy(), 0.0)
    t = 0.0
    for (dt, z), (xk, Pk) in zip(steps, oracle):
        t += dt
        s = update(s, Measurement(t, LIDAR, z), p)
        assert np.max(np.abs(s.mean - xk)) < 1e-8
        assert np.max(np.abs(s.cov - Pk)) < 1e-8


# --- init / emission / rmse ----------------------------------------------------

def test_init_from_first_measurement():
    p = UkfParams()
    assert np.allclose(init_from_first_measurement(Measurement(0, LIDAR, [2, 1]), p).mean,
                       [2, 1, 0, 0])
    assert np.allclose(init_from_first_measurement(Measurement(0, DEPTH, [2, 0]), p).mean,
                       [2, 0, 0, 0])
    s = init_from_first_measurement(Measurement(0, DEPTH, [2, math.pi / 2]), p)
    assert np.allclose(s.mean, [0, 2, 0, 0], atol=1e-12)
    assert s.cov[2, 2] == s.cov[3, 3] == 4.0
    # range variance lies along world y after the polar conversion
    assert s.cov[1, 1] == pytest.approx(4 * p.R_depth[0, 0])
    s = init_from_first_measurement(Measurement(0, LIDAR, [1, 0], (1.0, 1.0, math.pi / 2)), p)
    assert np.allclose(s.mean, [1, 2, 0, 0])


def test_emit_estimate_side_effect_free():
    tr = OpponentTracker()
    with pytest.raises(RuntimeError):
        emit_estimate(tr, 0.0)
    tr.state = UkfState(np.array([0.0, 0, 1, 0]), np.eye(4), 0.0)
    before = tr.state.copy()
    assert np.allclose(emit_estimate(tr, 0.0).mean, before.mean)
    assert np.allclose(emit_estimate(tr, 0.5).mean[:2], [0.5, 0])
    assert np.array_equal(tr.state.mean, before.mean) and tr.state.t == 0.0


def test_emission_schedule():
    ms = []
    for k in range(5):
        ms.append(Measurement(k * 1.0 + 0.03, LIDAR, [2.0, 0.0]))
        ms.append(Measurement(k * 1.0 + 0.27, DEPTH, [2.0, 0.0]))
        ms.append(Measurement(k * 1.0 + 0.77, YOLO, [2.0, 0.0]))
    est, _ = run_filter(ms, t_end=5.0)
    ts = np.array([e.t for e in est])
    assert ts[0] == pytest.approx(0.1) and ts[-1] == 5.0
    assert np.all(np.abs(ts * 10 - np.round(ts * 10)) == 0)
    assert np.allclose(np.diff(ts), 0.1)
    assert len(ts) == 50


def test_emission_times_exact():
    ts = emission_times(0.0, 2.0, 10.0)
    assert len(ts) == 21 and ts[3] == 0.3


def test_rmse_cases():
    t = np.linspace(0, 10, 101)
    gt = np.column_stack([np.sin(t), t])
    assert compute_rmse(t, gt, t, gt) == (0.0, 0.0)
    rx, ry = compute_rmse(t, gt + [0.1, 0.0], t, gt)
    assert rx == pytest.approx(0.1) and ry == 0.0
    # interpolation at midpoints of a linear truth is exact
    tm = t[:-1] + 0.05
    rx, ry = compute_rmse(tm, np.column_stack([tm * 0, tm]), t, np.column_stack([t * 0, t]))
    assert ry < 1e-12
    with pytest.raises(ValueError):
        compute_rmse(t + 100, gt, t, gt)


def test_csv_roundtrip(tmp_path):
    ms = [Measurement(0.5, LIDAR, [1.5, -0.2], (0.1, 0.2, 0.3)),
          Measurement(0.7, YOLO, [2.0, 0.1])]
    write_measurement_log(ms, tmp_path / "m.csv")
    back = read_measurement_log(tmp_path / "m.csv")
    assert [m.channel for m in back] == [LIDAR, YOLO]
    assert np.allclose(back[0].values, [1.5, -0.2]) and np.allclose(back[0].extrinsic, (0.1, 0.2, 0.3))
    est, _ = run_filter(ms, t_end=1.0)
    write_estimates(est, tmp_path / "e.csv")
    arr = read_estimates(tmp_path / "e.csv")
    assert arr.shape == (len(est), 7)
    (tmp_path / "bare.csv").write_text("t,sensor,v1,v2\n0.1,depth,2.0,0.0\n")
    assert read_measurement_log(tmp_path / "bare.csv")[0].extrinsic == (0.0, 0.0, 0.0)


def test_tracker_restarts_after_repeated_rejections():
    tr = OpponentTracker(UkfParams(reinit_after=2))
    tr.process(Measurement(0.0, LIDAR, [2.0, 0.0]))
    assert not tr.process(Measurement(0.1, LIDAR, [6.0, 0.0]))
    assert tr.process(Measurement(0.2, LIDAR, [6.0, 0.1]))
    assert tr.n_reinit == 1 and np.allclose(tr.state.mean, [6.0, 0.1, 0, 0])


def test_relinearization_wide_prior():
    # prior 2 m wide at 1.3 m range: a single sigma-point update lands far off,
    # relinearized passes approach the measured position
    s = UkfState(np.array([1.3, 0.3, 0.0, 0.0]), np.diag([4.7, 4.7, 4.0, 4.0]), 0.0)
    z = np.array([2.35, 0.17])
    target = 2.35 * np.array([math.cos(0.17), math.sin(0.17)])
    m = Measurement(0.0, DEPTH, z)
    one = update(s, m, UkfParams(iterations=1, outlier_gate=np.inf))
    many = update(s, m, UkfParams(outlier_gate=np.inf))
    assert np.linalg.norm(one.mean[:2] - target) > 1.0
    assert np.linalg.norm(many.mean[:2] - target) < 0.01


def test_relinearization_is_noop_for_lidar():
    s = UkfState(np.array([2.0, 0.3, 0.5, 0.0]), np.eye(4), 0.0)
    m = Measurement(0.1, LIDAR, [2.1, 0.2])
    a = update(s, m, UkfParams(iterations=1))
    b = update(s, m, UkfParams(iterations=5))
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)
