"""Opponent estimation chain used in the loop: sensors -> perception -> UKF.

The ego car's LiDAR scan is clustered and rectangle-fitted; the camera is
synthesized from the simulator pose (it is the sensor model, not an
observation). Everything the policy sees about the opponent comes out of the
tracker's estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..fusion import DEPTH, LIDAR, YOLO, Measurement, OpponentTracker, UkfParams, emit_estimate
from ..perception import (CameraModel, camera_measurements, camera_pose, cluster_scan,
                          complete_rectangle, fit_rectangle, select_opponent_cluster,
                          synth_camera_detection)
from ..raceline import Raceline, heading_at, project_to_raceline
from ..sim import OccupancyGrid, VehicleParams, VehicleState
from ..sim.lidar import LidarScan

# pixel / depth noise at noise scale 1
SIGMA_PX = 2.0
SIGMA_DEPTH = 0.05
# slack on the car dimensions when deciding whether a cluster could be a car
SIZE_SLACK = 0.12
# seconds without an accepted measurement before the track is reported lost
MAX_COAST = 1.0
# clusters this close to either end of the scan are cut off by the field of view
EDGE_BEAMS = 3


def every_n(rate: float, control_period: float) -> int:
    """Control steps between samples of a sensor running at ``rate`` Hz (0 = never)."""
    if rate <= 0:
        return 0
    return max(int(round(1.0 / (rate * control_period))), 1)


@dataclass
class SensorChain:
    grid: OccupancyGrid
    params: VehicleParams = field(default_factory=VehicleParams)
    ukf: UkfParams = field(default_factory=UkfParams)
    cam: CameraModel = field(default_factory=CameraModel)
    noise: float = 1.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    tracker: OpponentTracker = None
    max_coast: float = MAX_COAST
    n_lidar: int = 0
    n_camera: int = 0

    def __post_init__(self):
        if self.tracker is None:
            self.tracker = OpponentTracker(self.ukf)

    # -- LiDAR -------------------------------------------------------------

    def _car_sized(self, rect) -> bool:
        return (rect.half_len <= self.params.length / 2 + SIZE_SLACK
                and rect.half_wid <= self.params.width / 2 + SIZE_SLACK)

    def lidar_measurement(self, scan: LidarScan) -> Measurement | None:
        """Opponent center in the sensor frame from one scan, or None."""
        sx, sy, syaw = scan.pose
        rects = []
        last = scan.n_beams - 1 - EDGE_BEAMS
        for cl in cluster_scan(scan):
            if cl.beams[0] < EDGE_BEAMS or cl.beams[-1] > last:
                continue
            r = fit_rectangle(cl)
            if not self._car_sized(r):
                continue
            rects.append(complete_rectangle(r, (0.0, 0.0), self.params.length,
                                            self.params.width))
        if not rects:
            return None
        c, s = math.cos(syaw), math.sin(syaw)
        centers_w = [np.array([sx + c * r.center[0] - s * r.center[1],
                               sy + s * r.center[0] + c * r.center[1]]) for r in rects]
        if self.tracker.initialized:
            pred = emit_estimate(self.tracker, scan.t)
            cov = pred.cov[:2, :2] + self.ukf.R(LIDAR)
            pick = select_opponent_cluster(centers_w, pred.mean[:2], cov)
            if pick is None:
                return None
            k = int(np.argmin([np.linalg.norm(cw - pick[0]) for cw in centers_w]))
        else:
            # no prior yet: nearest car-sized object in front of the sensor
            ahead = [k for k, r in enumerate(rects) if r.center[0] > 0]
            if not ahead:
                return None
            k = min(ahead, key=lambda j: float(np.hypot(*rects[j].center)))
        return Measurement(round(scan.t, 9), LIDAR, np.asarray(rects[k].center, dtype=float),
                           (sx, sy, syaw))

    # -- camera ------------------------------------------------------------

    def camera_measurements(self, ego: VehicleState, opponent: VehicleState,
                            t: float) -> list[Measurement]:
        det = synth_camera_detection(ego.pose, opponent, self.params, self.cam,
                                     SIGMA_PX * self.noise, SIGMA_DEPTH * self.noise, self.rng,
                                     self.grid, t)
        if det is None:
            return []
        (rd, bd), (ry, by) = camera_measurements(*det, self.cam)
        pose = camera_pose(ego.pose, self.cam)
        t = round(t, 9)
        return [Measurement(t, DEPTH, np.array([rd, bd]), pose),
                Measurement(t, YOLO, np.array([ry, by]), pose)]

    # -- fusion --------------------------------------------------------------

    def feed(self, measurements) -> None:
        for m in measurements:
            self.tracker.process(m)
            if m.channel == LIDAR:
                self.n_lidar += 1
            else:
                self.n_camera += 1

    def estimate(self, t: float):
        """Predicted opponent state at ``t``, or None before the first fix or once
        the opponent has been out of sensor view for longer than ``max_coast``."""
        if not self.tracker.initialized or t - self.tracker.state.t > self.max_coast:
            return None
        return emit_estimate(self.tracker, t)


def estimate_to_state(est, rl: Raceline) -> tuple[VehicleState, float]:
    """Opponent pose for the observation from a UKF estimate.

    Heading follows the estimated velocity, or the raceline heading when the
    estimated speed is too small to define one. Steering and yaw rate are not
    observable by the chain and are reported as 0.
    """
    x, y, vx, vy = (float(v) for v in est.mean)
    s, _, _ = project_to_raceline(rl, (x, y))
    speed = math.hypot(vx, vy)
    yaw = math.atan2(vy, vx) if speed > 0.2 else heading_at(rl, s)
    return VehicleState(x=x, y=y, yaw=yaw, v=speed), s
