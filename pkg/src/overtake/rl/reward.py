"""Seven-term racing reward."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..raceline import Raceline, heading_at, progress_delta
from ..sim.vehicle import VehicleState, wrap_angle

COMPONENTS = ("velocity", "progress", "overtake", "raceline", "collision", "heading", "smooth")
# +1 terms are rewards, -1 terms penalties
SIGNS = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0])


@dataclass(frozen=True)
class RewardWeights:
    w_vel: float = 0.01
    w_prog: float = 1.0
    w_overtake: float = 0.5
    w_raceline: float = 0.1
    w_collision: float = 10.0
    w_heading: float = 0.1
    w_smooth: float = 0.05

    def __post_init__(self):
        if any(w < 0 for w in asdict(self).values()):
            raise ValueError("reward weights must be >= 0")

    def vector(self) -> np.ndarray:
        return np.array([self.w_vel, self.w_prog, self.w_overtake, self.w_raceline,
                         self.w_collision, self.w_heading, self.w_smooth])


@dataclass(frozen=True)
class TrackPos:
    """A car's projection onto the raceline."""
    s: float
    lateral: float


def overtake_term(rl: Raceline, s_agent: float, s_opponent: float, radius_pts: int = 3) -> float:
    """+1 leading by more than ``radius_pts`` waypoints, -1 trailing, linear between."""
    lead = progress_delta(rl, s_opponent, s_agent)
    return float(np.clip(lead / (radius_pts * rl.spacing), -1.0, 1.0))


def reward_components(state: VehicleState, prev: TrackPos, now: TrackPos,
                      opponent: TrackPos | None, prev_steering: float, collided: bool,
                      rl: Raceline) -> np.ndarray:
    """Unweighted, unsigned components in ``COMPONENTS`` order."""
    ot = 0.0 if opponent is None else overtake_term(rl, now.s, opponent.s)
    return np.array([
        state.v,
        progress_delta(rl, prev.s, now.s),
        ot,
        abs(now.lateral),
        1.0 if collided else 0.0,
        abs(wrap_angle(state.yaw - heading_at(rl, now.s))),
        abs(state.steering - prev_steering),
    ])


def compute_reward(state: VehicleState, prev: TrackPos, now: TrackPos, opponent: TrackPos | None,
                   prev_steering: float, collided: bool, rl: Raceline,
                   weights: RewardWeights = RewardWeights()) -> tuple[float, np.ndarray]:
    """(total, components) with total = sum(sign * weight * component)."""
    comp = reward_components(state, prev, now, opponent, prev_steering, collided, rl)
    return float(np.sum(SIGNS * weights.vector() * comp)), comp
