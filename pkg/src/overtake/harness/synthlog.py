"""Synthetic opponent measurement logs with known ground truth.

``direct_log`` draws measurements straight from the fusion measurement models
(noise sampled from each channel's R), which is what the filter assumes.
``cv_truth_run`` additionally draws the truth itself from the filter's
constant-velocity process model, for consistency (NEES) checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..fusion import (DEPTH, LIDAR, YOLO, Measurement, UkfParams, measurement_model,
                      process_noise)


@dataclass
class TruthTrack:
    t: np.ndarray
    xy: np.ndarray
    yaw: np.ndarray
    vel: np.ndarray


def schedule(duration: float, rate: float, phase: float = 0.0) -> np.ndarray:
    """Sample times k/rate + phase inside [0, duration)."""
    if rate <= 0:
        return np.zeros(0)
    n = int(math.floor((duration - phase) * rate - 1e-9)) + 1
    return phase + np.arange(max(n, 0)) / rate


def _measure(channel, state, ego, params: UkfParams, noise: float, rng):
    z = measurement_model(channel, state, ego)
    if noise > 0:
        z = z + rng.multivariate_normal(np.zeros(2), params.R(channel)) * noise
    if channel != LIDAR:
        z[0] = max(z[0], 1e-3)
        z[1] = (z[1] + math.pi) % (2 * math.pi) - math.pi
    return Measurement(float(np.round(_t(state), 9)), channel, z, tuple(float(v) for v in ego))


def _t(state):
    return state[4]


def weave_truth(t, phase, ego_speed=1.0, gap=2.5):
    """Opponent weaving ahead of an ego car driving along +x at ``ego_speed``."""
    ex = ego_speed * t
    x = ex + gap + 0.4 * np.sin(0.4 * t + phase)
    y = 0.5 * np.sin(0.6 * t + 2 * phase)
    vx = ego_speed + 0.16 * np.cos(0.4 * t + phase)
    vy = 0.3 * np.cos(0.6 * t + 2 * phase)
    return np.column_stack([x, y, vx, vy]), np.column_stack([ex, 0 * t, 0 * t])


def direct_log(seed: int, duration: float = 30.0, lidar_rate: float = 2.0,
               camera_rate: float = 1.0, noise: float = 1.0, params: UkfParams | None = None,
               gt_rate: float = 100.0):
    """Measurements of a weaving opponent drawn from the measurement models.

    Camera rows come in (depth, yolo) pairs at the same time stamp. Returns
    (measurements sorted by time, TruthTrack at ``gt_rate``).
    """
    params = params or UkfParams()
    rng = np.random.default_rng(seed)
    phase = float(rng.uniform(0, 2 * math.pi))
    ml = schedule(duration, lidar_rate, 0.5 / max(lidar_rate, 1e-9) * 0.1)
    mc = schedule(duration, camera_rate, 0.5 / max(camera_rate, 1e-9))
    events = [(t, LIDAR) for t in ml] + [(t, c) for t in mc for c in (DEPTH, YOLO)]
    events.sort(key=lambda e: (e[0], e[1] != DEPTH, e[1] == YOLO))
    ts = np.array([e[0] for e in events])
    states, egos = weave_truth(ts, phase)
    out = []
    for (t, ch), s, ego in zip(events, states, egos):
        out.append(_measure(ch, np.append(s, t), ego, params, noise, rng))
    tg = np.arange(int(round(duration * gt_rate)) + 1) / gt_rate
    sg, _ = weave_truth(tg, phase)
    truth = TruthTrack(tg, sg[:, :2], np.arctan2(sg[:, 3], sg[:, 2]), sg[:, 2:])
    return out, truth


def cv_truth_run(seed: int, duration: float = 20.0, params: UkfParams | None = None,
                 tick: float = 0.1, lidar_every: int = 5, camera_every: int = 10):
    """Truth drawn from the constant-velocity model, measurements from R.

    Returns (prior mean, prior cov, measurements, tick times, truth states at ticks).
    Measurements fall on ticks so truth is known exactly at every emission.
    """
    params = params or UkfParams()
    rng = np.random.default_rng(seed)
    m0 = np.array([2.5, 0.0, 0.0, 0.0])
    P0 = np.diag([0.05 ** 2, 0.05 ** 2, 0.3 ** 2, 0.3 ** 2])
    x = rng.multivariate_normal(m0, P0)
    Q = process_noise(tick, params)
    F = np.eye(4)
    F[0, 2] = F[1, 3] = tick
    n = int(round(duration / tick))
    ticks = np.arange(n + 1) * tick
    truth = [x]
    ms = []
    for k in range(1, n + 1):
        x = F @ x + rng.multivariate_normal(np.zeros(4), Q)
        truth.append(x)
        t = float(ticks[k])
        if k % lidar_every == 0:
            ms.append(_measure(LIDAR, np.append(x, t), (0.0, 0.0, 0.0), params, 1.0, rng))
        if k % camera_every == camera_every // 2:
            for ch in (DEPTH, YOLO):
                ms.append(_measure(ch, np.append(x, t), (0.0, 0.0, 0.0), params, 1.0, rng))
    return m0, P0, ms, ticks, np.array(truth)
