"""Policy observation (162 values) and action scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..raceline import Raceline, future_waypoints, project_to_raceline
from ..sim.lidar import LidarScan
from ..sim.vehicle import VehicleParams, VehicleState, wrap_angle

OBS_SIZE = 162
LIDAR_SLICE = slice(0, 108)
AGENT_ODOM = slice(108, 115)
OPP_ODOM = slice(115, 122)
AGENT_WPTS = slice(122, 142)
OPP_WPTS = slice(142, 162)
OPPONENT_BLOCKS = (OPP_ODOM, OPP_WPTS)

MAX_STEER = 0.34
MAX_SPEED = 3.0


@dataclass(frozen=True)
class ObsConfig:
    lidar_stride: int = 10
    n_waypoints: int = 10
    waypoint_spacing: float = 0.5
    position_scale: float = 0.1
    speed_scale: float = 1.0 / MAX_SPEED
    steer_scale: float = 1.0 / MAX_STEER


def _local(points, pose):
    x0, y0, yaw0 = pose
    c, s = math.cos(yaw0), math.sin(yaw0)
    d = np.asarray(points, dtype=float) - np.array([x0, y0])
    return np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]])


def odometry_block(state: VehicleState, frame, cfg: ObsConfig) -> np.ndarray:
    (x, y), = _local([[state.x, state.y]], frame)
    dyaw = wrap_angle(state.yaw - frame[2])
    return np.array([x * cfg.position_scale, y * cfg.position_scale, math.sin(dyaw),
                     math.cos(dyaw), state.v * cfg.speed_scale, state.yaw_rate,
                     state.steering * cfg.steer_scale])


def waypoint_block(rl: Raceline, state: VehicleState, frame, cfg: ObsConfig,
                   s: float | None = None) -> np.ndarray:
    if s is None:
        s, _, _ = project_to_raceline(rl, (state.x, state.y))
    pts, _ = future_waypoints(rl, s, cfg.n_waypoints, cfg.waypoint_spacing)
    return (_local(pts, frame) * cfg.position_scale).ravel()


def lidar_block(scan: LidarScan | None, cfg: ObsConfig) -> np.ndarray:
    n = LIDAR_SLICE.stop - LIDAR_SLICE.start
    if scan is None:
        return np.ones(n)
    r = np.asarray(scan.ranges)[::cfg.lidar_stride][:n] / scan.max_range
    if len(r) != n:
        raise ValueError(f"scan yields {len(r)} downsampled beams, expected {n}")
    return np.clip(r, 0.0, 1.0)


def build_observation(agent: VehicleState, opponent: VehicleState | None, scan: LidarScan | None,
                      rl: Raceline, cfg: ObsConfig = ObsConfig(),
                      s_agent: float | None = None, s_opponent: float | None = None) -> np.ndarray:
    """Observation in the agent's body frame.

    ``opponent=None`` zero-fills the opponent blocks. ``scan=None`` reads as an
    empty scan (all beams at max range). Projections may be passed in to avoid
    recomputing them.
    """
    frame = (agent.x, agent.y, agent.yaw)
    obs = np.zeros(OBS_SIZE)
    obs[LIDAR_SLICE] = lidar_block(scan, cfg)
    obs[AGENT_ODOM] = odometry_block(agent, frame, cfg)
    obs[AGENT_WPTS] = waypoint_block(rl, agent, frame, cfg, s_agent)
    if opponent is not None:
        obs[OPP_ODOM] = odometry_block(opponent, frame, cfg)
        obs[OPP_WPTS] = waypoint_block(rl, opponent, frame, cfg, s_opponent)
    if not np.all(np.isfinite(obs)):
        raise ValueError("non-finite observation")
    return obs


class ActionScaler:
    """Maps raw policy outputs in [-1, 1]^2 to (steering rad, speed m/s).

    Out-of-range raw values are clamped and counted in ``n_clamped``.
    """

    def __init__(self, params: VehicleParams = VehicleParams()):
        self.max_steer = params.max_steer
        self.max_speed = params.max_speed
        self.n_clamped = 0

    def __call__(self, raw) -> tuple[float, float]:
        a0, a1 = float(raw[0]), float(raw[1])
        if not (-1.0 <= a0 <= 1.0 and -1.0 <= a1 <= 1.0):
            self.n_clamped += 1
            a0 = min(max(a0, -1.0), 1.0)
            a1 = min(max(a1, -1.0), 1.0)
        return self.max_steer * a0, 0.5 * self.max_speed * (a1 + 1.0)


def scale_action(raw, params: VehicleParams = VehicleParams()) -> tuple[float, float]:
    return ActionScaler(params)(raw)
