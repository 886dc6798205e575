"""Scripted opponent: pure pursuit on the raceline at a constant speed."""

from __future__ import annotations

import math

from ..raceline import Raceline, interpolate, project_to_raceline
from ..sim.vehicle import VehicleParams, VehicleState


def scripted_pursuit_controller(rl: Raceline, state: VehicleState, lookahead: float = 1.0,
                                target_speed: float = 1.2,
                                params: VehicleParams = VehicleParams(),
                                recovery_distance: float = 1.5) -> tuple[float, float]:
    """(steering, speed) steering toward the raceline point ``lookahead`` m ahead.

    Returns zero speed when the car is farther than ``recovery_distance`` from
    the line.
    """
    s, lateral, _ = project_to_raceline(rl, (state.x, state.y))
    if abs(lateral) > recovery_distance:
        return 0.0, 0.0
    gx, gy = interpolate(rl, s + lookahead)[0]
    dx, dy = gx - state.x, gy - state.y
    c, sn = math.cos(state.yaw), math.sin(state.yaw)
    lx, ly = c * dx + sn * dy, -sn * dx + c * dy
    ld2 = lx * lx + ly * ly
    if ld2 < 1e-12:
        return 0.0, target_speed
    curvature = 2.0 * ly / ld2
    steer = math.atan(params.wheelbase * curvature)
    steer = min(max(steer, -params.max_steer), params.max_steer)
    return steer, min(max(target_speed, 0.0), params.max_speed)
