"""Unscented Kalman filter fusing LiDAR and camera measurements of the opponent.

State is ``[x, y, vx, vy]`` in the tracking frame (world / odometry). Each
measurement carries the pose of the sensor that produced it in that frame, so
LiDAR points and camera range/bearing pairs can be compared with the state
directly.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

N_STATE = 4
LIDAR, DEPTH, YOLO = "lidar", "depth", "yolo"
CHANNELS = (LIDAR, DEPTH, YOLO)
RANGE_BEARING = (DEPTH, YOLO)
MIN_RANGE = 1e-6
EIG_FLOOR = 1e-9

# per-sensor error magnitudes from the hardware validation runs, used as
# default noise levels: LiDAR (x, y); camera channels (range, lateral at the reference range)
HARDWARE_RMSE = {
    LIDAR: (0.0430, 0.0652),
    DEPTH: (0.1164, 0.0628),
    YOLO: (0.1106, 0.0575),
    "ukf": (0.0816, 0.0531),
}
REFERENCE_RANGE = 2.5


def _rb_cov(rmse, rng=REFERENCE_RANGE):
    return np.diag([rmse[0] ** 2, (rmse[1] / rng) ** 2])


class StaleMeasurement(Exception):
    pass


class OutlierRejected(Exception):
    def __init__(self, chi2: float):
        super().__init__(f"innovation chi2 {chi2:.2f} above gate")
        self.chi2 = chi2


@dataclass
class UkfParams:
    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0
    q_pos: float = 0.0
    q_vel: float = 2.0
    R_lidar: np.ndarray = field(
        default_factory=lambda: np.diag(np.square(HARDWARE_RMSE[LIDAR])))
    R_depth: np.ndarray = field(default_factory=lambda: _rb_cov(HARDWARE_RMSE[DEPTH]))
    R_yolo: np.ndarray = field(default_factory=lambda: _rb_cov(HARDWARE_RMSE[YOLO]))
    emit_rate: float = 10.0
    reorder_tolerance: float = 0.05
    outlier_gate: float = 13.8
    init_vel_std: float = 2.0
    # consecutive gated-out measurements after which the track is restarted
    reinit_after: int = 3
    # max posterior relinearization passes for range/bearing updates (1 = plain UKF)
    iterations: int = 10

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        for name in ("R_lidar", "R_depth", "R_yolo"):
            R = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, R)
            np.linalg.cholesky(R)

    def R(self, channel: str) -> np.ndarray:
        return {LIDAR: self.R_lidar, DEPTH: self.R_depth, YOLO: self.R_yolo}[channel]

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("alpha", "beta", "kappa", "q_pos", "q_vel",
                                             "emit_rate", "reorder_tolerance", "outlier_gate",
                                             "init_vel_std", "reinit_after",
                                             "iterations")}
        for name in ("R_lidar", "R_depth", "R_yolo"):
            out[name] = np.asarray(getattr(self, name)).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> UkfParams:
        d = dict(d)
        for name in ("R_lidar", "R_depth", "R_yolo"):
            if name in d:
                d[name] = np.asarray(d[name], dtype=float)
        return cls(**d)


@dataclass
class UkfState:
    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0

    def copy(self) -> UkfState:
        return UkfState(self.mean.copy(), self.cov.copy(), self.t)


@dataclass
class Measurement:
    t: float
    channel: str
    values: np.ndarray
    # pose (x, y, yaw) of the sensor in the tracking frame
    extrinsic: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("measurement values must be finite")
        if self.channel in RANGE_BEARING and self.values[0] <= 0:
            raise ValueError("range must be > 0")


def wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def repair_cov(P: np.ndarray) -> np.ndarray:
    """Symmetrize and floor the eigenvalues at ``EIG_FLOOR`` if any fall below."""
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w.min() < EIG_FLOOR:
        P = (V * np.maximum(w, EIG_FLOOR)) @ V.T
        P = 0.5 * (P + P.T)
    return P


# ---------------------------------------------------------------------------
# unscented transform


def ut_weights(n: int, params: UkfParams) -> tuple[np.ndarray, np.ndarray, float]:
    lam = params.alpha ** 2 * (n + params.kappa) - n
    wm = np.full(2 * n + 1, 0.5 / (n + lam))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + 1.0 - params.alpha ** 2 + params.beta
    return wm, wc, lam


def sigma_points(mean, cov, params: UkfParams):
    """Scaled sigma points (2n+1, n) with their mean and covariance weights."""
    mean = np.asarray(mean, dtype=float)
    n = len(mean)
    wm, wc, lam = ut_weights(n, params)
    try:
        L = np.linalg.cholesky((n + lam) * cov)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky((n + lam) * repair_cov(cov))
    X = np.empty((2 * n + 1, n))
    X[0] = mean
    X[1:n + 1] = mean + L.T
    X[n + 1:] = mean - L.T
    return X, wm, wc


def _weighted_mean(Z, wm, angle_idx=()):
    z = wm @ Z
    for i in angle_idx:
        # average angles as offsets from the central point
        z[i] = Z[0, i] + wm @ wrap(Z[:, i] - Z[0, i])
        z[i] = float(wrap(z[i]))
    return z


def unscented_transform(f, mean, cov, params: UkfParams, angle_idx=()):
    """Propagate (mean, cov) through ``f``; returns (mean_y, cov_y, cross_xy, sigmas)."""
    X, wm, wc = sigma_points(mean, cov, params)
    Z = np.array([f(x) for x in X])
    z = _weighted_mean(Z, wm, angle_idx)
    dZ = Z - z
    for i in angle_idx:
        dZ[:, i] = wrap(dZ[:, i])
    dX = X - X[0]
    Pz = (wc[:, None] * dZ).T @ dZ
    Pxz = (wc[:, None] * dX).T @ dZ
    return z, Pz, Pxz, X


# ---------------------------------------------------------------------------
# filter steps


def process_noise(dt: float, params: UkfParams) -> np.ndarray:
    """White-noise-acceleration Q(dt) for [x, y, vx, vy], plus optional position walk."""
    q = params.q_vel
    blk = q * np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]])
    Q = np.zeros((4, 4))
    for i in (0, 1):
        Q[np.ix_([i, i + 2], [i, i + 2])] = blk
        Q[i, i] += params.q_pos * dt
    return Q


def _cv(dt):
    def f(x):
        return np.array([x[0] + x[2] * dt, x[1] + x[3] * dt, x[2], x[3]])
    return f


def predict(state: UkfState, dt: float, params: UkfParams) -> UkfState:
    """Constant-velocity prediction by ``dt`` seconds through the sigma points."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state.copy()
    mean, cov, _, _ = unscented_transform(_cv(dt), state.mean, state.cov, params)
    return UkfState(mean, repair_cov(cov + process_noise(dt, params)), state.t + dt)


def measurement_model(channel: str, x, extrinsic=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Predicted measurement of state ``x`` by a sensor at pose ``extrinsic``.

    LiDAR: opponent position in the sensor frame. Camera channels: (range,
    bearing) of the opponent in the sensor frame, bearing in (-pi, pi].
    """
    sx, sy, syaw = extrinsic
    dx, dy = x[0] - sx, x[1] - sy
    c, s = math.cos(syaw), math.sin(syaw)
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    if channel == LIDAR:
        return np.array([lx, ly])
    if channel in RANGE_BEARING:
        r = math.hypot(lx, ly)
        if r < MIN_RANGE:
            raise ValueError("bearing undefined: opponent at the sensor origin")
        return np.array([r, math.atan2(ly, lx)])
    raise ValueError(f"unknown channel {channel!r}")


def update(state: UkfState, m: Measurement, params: UkfParams) -> UkfState:
    """Predict to the measurement time and fuse it.

    Measurements older than the filter time by at most ``reorder_tolerance``
    are fused at the current filter time; older ones raise StaleMeasurement.
    Innovations above ``outlier_gate`` (chi-square) raise OutlierRejected.
    """
    if m.t < state.t - params.reorder_tolerance:
        raise StaleMeasurement(f"measurement at {m.t:.3f} behind filter time {state.t:.3f}")
    prior = predict(state, max(m.t - state.t, 0.0), params)
    angle_idx = (1,) if m.channel in RANGE_BEARING else ()
    z_hat, Pz, Pxz, _ = unscented_transform(
        lambda x: measurement_model(m.channel, x, m.extrinsic), prior.mean, prior.cov, params,
        angle_idx)
    S = Pz + params.R(m.channel)
    nu = m.values - z_hat
    if angle_idx:
        nu[1] = wrap(nu[1])
    chi2 = float(nu @ np.linalg.solve(S, nu))
    if chi2 > params.outlier_gate:
        raise OutlierRejected(chi2)
    K = np.linalg.solve(S.T, Pxz.T).T
    mean = prior.mean + K @ nu
    cov = repair_cov(prior.cov - K @ S @ K.T)
    if angle_idx:
        for _ in range(params.iterations - 1):
            prev = mean
            mean, cov = _relinearized_update(prior, mean, cov, m, params)
            if np.max(np.abs(mean - prev)) < 1e-9:
                break
    return UkfState(mean, cov, prior.t)


def _relinearized_update(prior: UkfState, mean, cov, m: Measurement, params: UkfParams):
    """Redo the update with h linearized by sigma points of the current posterior.

    Statistical linear regression z ~ A x + b with residual covariance Omega,
    then an ordinary Kalman update of the prior. Matters when the prior is wide
    compared with the range to the target.
    """
    z_hat, Pz, Pxz, _ = unscented_transform(
        lambda x: measurement_model(m.channel, x, m.extrinsic), mean, cov, params, (1,))
    A = np.linalg.solve(cov, Pxz).T
    Omega = Pz - A @ cov @ A.T
    S = A @ prior.cov @ A.T + Omega + params.R(m.channel)
    nu = m.values - (z_hat + A @ (prior.mean - mean))
    nu[1] = wrap(nu[1])
    K = np.linalg.solve(S.T, (prior.cov @ A.T).T).T
    return prior.mean + K @ nu, repair_cov(prior.cov - K @ S @ K.T)


def init_from_first_measurement(m: Measurement, params: UkfParams) -> UkfState:
    """Position from the measurement, zero velocity, inflated position covariance."""
    sx, sy, syaw = m.extrinsic
    c, s = math.cos(syaw), math.sin(syaw)
    rot = np.array([[c, -s], [s, c]])
    R = params.R(m.channel)
    if m.channel == LIDAR:
        local = m.values
        J = np.eye(2)
    else:
        r, b = m.values
        local = np.array([r * math.cos(b), r * math.sin(b)])
        J = np.array([[math.cos(b), -r * math.sin(b)], [math.sin(b), r * math.cos(b)]])
    pos = rot @ local + np.array([sx, sy])
    P = np.zeros((4, 4))
    P[:2, :2] = 4.0 * rot @ J @ R @ J.T @ rot.T
    P[2, 2] = P[3, 3] = params.init_vel_std ** 2
    return UkfState(np.array([pos[0], pos[1], 0.0, 0.0]), repair_cov(P), m.t)


@dataclass
class OpponentTracker:
    """Single-writer UKF wrapper: initialization, drop counters, emission."""

    params: UkfParams = field(default_factory=UkfParams)
    channels: tuple[str, ...] = CHANNELS
    state: UkfState | None = None
    n_updates: int = 0
    n_stale: int = 0
    n_outliers: int = 0
    n_ignored: int = 0
    n_reinit: int = 0
    _rejected_run: int = 0

    @property
    def initialized(self) -> bool:
        return self.state is not None

    def process(self, m: Measurement) -> bool:
        """Fuse one measurement; returns False if it was dropped."""
        if m.channel not in self.channels:
            self.n_ignored += 1
            return False
        if self.state is None:
            self.state = init_from_first_measurement(m, self.params)
            self.n_updates += 1
            return True
        try:
            self.state = update(self.state, m, self.params)
        except StaleMeasurement:
            self.n_stale += 1
            return False
        except OutlierRejected as exc:
            self.n_outliers += 1
            self._rejected_run += 1
            log.debug("dropped %s measurement at t=%.3f: %s", m.channel, m.t, exc)
            if 0 < self.params.reinit_after <= self._rejected_run:
                # lost track: restart from the latest measurement
                self.state = init_from_first_measurement(m, self.params)
                self.n_reinit += 1
                self._rejected_run = 0
                return True
            return False
        self._rejected_run = 0
        self.n_updates += 1
        return True

    def predicted(self, t: float) -> UkfState:
        return emit_estimate(self, t)


def emit_estimate(tracker: OpponentTracker, t_query: float) -> UkfState:
    """Side-effect-free prediction of the tracker's state to ``t_query``."""
    if tracker.state is None:
        raise RuntimeError("tracker not initialized")
    st = tracker.state
    return predict(st, max(t_query - st.t, 0.0), tracker.params)


# ---------------------------------------------------------------------------
# replay and evaluation


@dataclass
class Estimate:
    t: float
    mean: np.ndarray
    cov: np.ndarray


def emission_times(t0: float, t1: float, rate: float) -> np.ndarray:
    """Clock ticks k / rate in [t0, t1]."""
    k0 = math.ceil(t0 * rate - 1e-9)
    k1 = math.floor(t1 * rate + 1e-9)
    return np.arange(k0, k1 + 1) / rate


def run_filter(measurements, params: UkfParams = None, channels=CHANNELS,
               t_end: float | None = None) -> tuple[list[Estimate], OpponentTracker]:
    """Feed time-ordered measurements and emit estimates on the ``emit_rate`` clock.

    Emission starts at the first tick at or after initialization. Measurements
    stamped at or before a tick are fused before that tick is emitted.
    """
    params = params or UkfParams()
    tracker = OpponentTracker(params, tuple(channels))
    ms = sorted((m for m in measurements if m.channel in channels), key=lambda m: m.t)
    if not ms:
        return [], tracker
    t_end = ms[-1].t if t_end is None else t_end
    ticks = emission_times(ms[0].t, t_end, params.emit_rate)
    out = []
    i = 0
    for tick in ticks:
        while i < len(ms) and ms[i].t <= tick + 1e-12:
            tracker.process(ms[i])
            i += 1
        if tracker.initialized:
            est = emit_estimate(tracker, tick)
            out.append(Estimate(float(tick), est.mean, est.cov))
    return out, tracker


def compute_rmse(est_t, est_xy, gt_t, gt_xy, warmup: float = 0.0) -> tuple[float, float]:
    """Per-axis RMSE of estimates against linearly interpolated ground truth.

    Only estimates inside the ground-truth time span (and after ``warmup``
    seconds from the first estimate) are scored.
    """
    est_t, est_xy = np.asarray(est_t, float), np.asarray(est_xy, float)
    gt_t, gt_xy = np.asarray(gt_t, float), np.asarray(gt_xy, float)
    if len(gt_t) < 2:
        raise ValueError("need at least two ground-truth samples")
    if len(est_t) == 0:
        raise ValueError("no estimates to score")
    keep = (est_t >= gt_t[0]) & (est_t <= gt_t[-1]) & (est_t >= est_t[0] + warmup)
    if not keep.any():
        raise ValueError("estimates and ground truth do not overlap in time")
    tx = np.interp(est_t[keep], gt_t, gt_xy[:, 0])
    ty = np.interp(est_t[keep], gt_t, gt_xy[:, 1])
    ex = est_xy[keep, 0] - tx
    ey = est_xy[keep, 1] - ty
    return float(np.sqrt(np.mean(ex ** 2))), float(np.sqrt(np.mean(ey ** 2)))


def nees(truth_state, est: Estimate) -> float:
    e = np.asarray(truth_state, float) - est.mean
    return float(e @ np.linalg.solve(est.cov, e))


# ---------------------------------------------------------------------------
# files

LOG_COLUMNS = ("t", "sensor", "v1", "v2", "ego_x", "ego_y", "ego_yaw")
GT_COLUMNS = ("t", "x", "y", "yaw")
EST_COLUMNS = ("t", "x", "y", "vx", "vy", "sigma_x", "sigma_y")


def _fmt(v: float) -> str:
    return f"{v:.9f}"


def write_measurement_log(measurements, path) -> None:
    """Measurement log: t, sensor, v1, v2, then the sensor pose columns."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_COLUMNS)
        for m in measurements:
            w.writerow([_fmt(m.t), m.channel, _fmt(m.values[0]), _fmt(m.values[1]),
                        *(_fmt(v) for v in m.extrinsic)])


def read_measurement_log(path) -> list[Measurement]:
    """Read a measurement log. Sensor-pose columns are optional (identity if absent)."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"t", "sensor", "v1", "v2"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for row in reader:
            ext = (float(row.get("ego_x") or 0.0), float(row.get("ego_y") or 0.0),
                   float(row.get("ego_yaw") or 0.0))
            out.append(Measurement(float(row["t"]), row["sensor"],
                                   np.array([float(row["v1"]), float(row["v2"])]), ext))
    return out


def write_ground_truth(t, xy, yaw, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(GT_COLUMNS)
        for row in zip(t, np.asarray(xy)[:, 0], np.asarray(xy)[:, 1], yaw):
            w.writerow([_fmt(v) for v in row])


def read_ground_truth(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(h.strip() for h in next(reader))
        if header != GT_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(GT_COLUMNS)}")
        rows = np.array([[float(v) for v in r] for r in reader if r])
    return rows[:, 0], rows[:, 1:3], rows[:, 3]


def write_estimates(estimates, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EST_COLUMNS)
        for e in estimates:
            w.writerow([_fmt(e.t), *(_fmt(v) for v in e.mean),
                        _fmt(math.sqrt(e.cov[0, 0])), _fmt(math.sqrt(e.cov[1, 1]))])


def read_estimates(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(h.strip() for h in next(reader))
        if header != EST_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(EST_COLUMNS)}")
        return np.array([[float(v) for v in r] for r in reader if r])


def write_rmse_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def with_noise(params: UkfParams, **R) -> UkfParams:
    return replace(params, **R)
