"""Kinematic bicycle model for a single car."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def wrap_angles(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi)
    out = np.where(out <= 0.0, out + 2.0 * np.pi, out)
    return out - np.pi


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 0.33
    length: float = 0.58
    width: float = 0.31
    max_steer: float = 0.34
    max_speed: float = 3.0
    steer_rate_limit: float = 3.2
    accel_limit: float = 7.0

    def __post_init__(self):
        for name in ("wheelbase", "length", "width", "max_steer", "max_speed",
                     "steer_rate_limit", "accel_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"VehicleParams.{name} must be > 0")
        if self.max_steer > math.pi / 2:
            raise ValueError("max_steer must be <= pi/2")


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    v: float = 0.0
    steering: float = 0.0
    yaw_rate: float = 0.0
    t: float = 0.0

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw, self.v, self.steering, self.yaw_rate, self.t])


def _slew(current: float, target: float, max_delta: float) -> float:
    if target > current:
        return min(target, current + max_delta)
    return max(target, current - max_delta)


def step_bicycle(state: VehicleState, cmd: tuple[float, float], params: VehicleParams,
                 dt: float) -> VehicleState:
    """Advance one step of the kinematic bicycle.

    Commands are clamped to the actuator bounds, then steering and speed slew
    toward them under the rate limits. Position and heading are integrated in
    closed form for the (constant within the step) realized speed and steering,
    so a held steering angle traces an exact circle of radius
    ``wheelbase / tan(steering)``.
    """
    steer_cmd, speed_cmd = float(cmd[0]), float(cmd[1])
    values = (state.x, state.y, state.yaw, state.v, state.steering, steer_cmd, speed_cmd, dt)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"non-finite input to step_bicycle: state={state}, cmd={cmd}, dt={dt}")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")

    steer_cmd = min(max(steer_cmd, -params.max_steer), params.max_steer)
    speed_cmd = min(max(speed_cmd, 0.0), params.max_speed)

    steering = _slew(state.steering, steer_cmd, params.steer_rate_limit * dt)
    v = _slew(state.v, speed_cmd, params.accel_limit * dt)

    omega = v / params.wheelbase * math.tan(steering)
    yaw0 = state.yaw
    if abs(omega * dt) < 1e-9:
        x = state.x + v * dt * math.cos(yaw0)
        y = state.y + v * dt * math.sin(yaw0)
    else:
        yaw1 = yaw0 + omega * dt
        x = state.x + v / omega * (math.sin(yaw1) - math.sin(yaw0))
        y = state.y - v / omega * (math.cos(yaw1) - math.cos(yaw0))
    return VehicleState(x=x, y=y, yaw=wrap_angle(yaw0 + omega * dt), v=v, steering=steering,
                        yaw_rate=omega, t=state.t + dt)


def footprint_corners(state: VehicleState, params: VehicleParams) -> np.ndarray:
    """Corners (4, 2) of the car's rectangle, counter-clockwise from rear-right."""
    hl, hw = params.length / 2.0, params.width / 2.0
    local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([state.x, state.y])


def with_pose(state: VehicleState, x: float, y: float, yaw: float) -> VehicleState:
    return replace(state, x=x, y=y, yaw=wrap_angle(yaw))
