"""Two-car overtaking environment on top of RaceSim.

Agent 0 is always a learner. Agent 1 is either the scripted pure-pursuit
opponent or, in self-play, a second learner sharing the same policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..harness.controllers import scripted_pursuit_controller
from ..raceline import (Raceline, heading_at, interpolate, left_normals, progress_delta,
                        project_to_raceline)
from ..sim import LidarConfig, OccupancyGrid, RaceSim, SimConfig, VehicleParams, VehicleState
from .observation import ActionScaler, ObsConfig, build_observation
from .reward import RewardWeights, TrackPos, compute_reward

SCRIPTED, SELF_PLAY = "scripted", "self_play"


@dataclass(frozen=True)
class EnvConfig:
    control_period: float = 0.1
    physics_dt: float = 0.01
    episode_time: float = 12.0
    opponent: str = SCRIPTED
    opponent_speed_frac: float = 0.4
    spawn_s: float = 2.0
    spawn_gap: tuple[float, float] = (2.5, 4.0)
    lateral_jitter: float = 0.4
    end_margin: float = 1.5
    pursuit_lookahead: float = 1.0
    lidar_max_range: float = 10.0
    obs: ObsConfig = field(default_factory=ObsConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        if self.opponent not in (SCRIPTED, SELF_PLAY):
            raise ValueError(f"opponent must be {SCRIPTED!r} or {SELF_PLAY!r}")
        if not 0 < self.opponent_speed_frac <= 1:
            raise ValueError("opponent_speed_frac must be in (0, 1]")
        n = self.control_period / self.physics_dt
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("control_period must be a multiple of physics_dt")


@dataclass
class StepOut:
    obs: list[np.ndarray]
    rewards: list[float]
    components: list[np.ndarray]
    done: bool
    collisions: list[bool]


class OvertakeEnv:
    def __init__(self, grid: OccupancyGrid, rl: Raceline, cfg: EnvConfig = EnvConfig(),
                 params: VehicleParams = VehicleParams()):
        self.grid, self.rl, self.cfg, self.params = grid, rl, cfg, params
        self.sim = RaceSim(grid, SimConfig(dt=cfg.physics_dt, n_agents=2, lidar_rate=0.0,
                                           camera_rate=0.0, timeout=1e9,
                                           lidar=LidarConfig(max_range=cfg.lidar_max_range)),
                           params)
        self.n_sub = int(round(cfg.control_period / cfg.physics_dt))
        self.learners = [0] if cfg.opponent == SCRIPTED else [0, 1]
        self.scaler = ActionScaler(params)
        self.opp_speed = cfg.opponent_speed_frac * params.max_speed
        self.n_truth_reads = [0, 0]
        self.t = 0.0
        self.done = True

    # -- state -------------------------------------------------------------

    @property
    def states(self) -> list[VehicleState]:
        return self.sim.states

    def spawn_pose(self, s: float, lateral: float, v: float = 0.0) -> VehicleState:
        p = interpolate(self.rl, s)[0]
        k = int(np.clip(np.searchsorted(self.rl.s, s % self.rl.length if self.rl.closed else s,
                                        side="right") - 1, 0, len(self.rl) - 1))
        n = left_normals(self.rl.waypoints, self.rl.closed)[k]
        p = p + lateral * n
        return VehicleState(x=float(p[0]), y=float(p[1]), yaw=heading_at(self.rl, s), v=v)

    def random_spawns(self, rng: np.random.Generator) -> list[VehicleState]:
        c = self.cfg
        gap = rng.uniform(*c.spawn_gap)
        lat = rng.uniform(-c.lateral_jitter, c.lateral_jitter, 2)
        return [self.spawn_pose(c.spawn_s, lat[0]), self.spawn_pose(c.spawn_s + gap, lat[1])]

    def track_pos(self, i: int) -> TrackPos:
        st = self.states[i]
        s, lat, _ = project_to_raceline(self.rl, (st.x, st.y))
        return TrackPos(s, lat)

    def reset(self, rng: np.random.Generator | None = None, spawns=None,
              observe: bool = True) -> list[np.ndarray]:
        if spawns is None:
            if rng is None:
                raise ValueError("reset needs an rng or explicit spawns")
            spawns = self.random_spawns(rng)
        self.sim.reset(spawns)
        self.t = 0.0
        self.done = False
        self.pos = [self.track_pos(i) for i in range(2)]
        return [self.observe(i) for i in self.learners] if observe else []

    # -- observation -------------------------------------------------------

    def scan(self, i: int):
        try:
            return self.sim.scan(i)
        except ValueError:
            return None

    def observe(self, i: int, opponent_override: VehicleState | None = None,
                opponent_s: float | None = None, scan=None) -> np.ndarray:
        """Observation for agent ``i``. Without an override the opponent block
        comes from simulator ground truth, which is counted in ``n_truth_reads[i]``."""
        j = 1 - i
        if opponent_override is None:
            self.n_truth_reads[i] += 1
            opp, s_opp = self.states[j], self.pos[j].s
        else:
            opp, s_opp = opponent_override, opponent_s
        scan = self.scan(i) if scan is None else scan
        return build_observation(self.states[i], opp, scan, self.rl, self.cfg.obs,
                                 self.pos[i].s, s_opp)

    # -- stepping ----------------------------------------------------------

    def scripted_action(self, i: int) -> tuple[float, float]:
        return scripted_pursuit_controller(self.rl, self.states[i], self.cfg.pursuit_lookahead,
                                           self.opp_speed, self.params)

    def step(self, actions: dict[int, np.ndarray], observe: bool = True) -> StepOut:
        """Apply raw actions (keyed by learner index) for one control period."""
        if self.done:
            raise RuntimeError("step() on a finished episode; call reset()")
        cmds = []
        for i in range(2):
            if i in actions:
                cmds.append(self.scaler(actions[i]))
            else:
                cmds.append(self.scripted_action(i))
        prev_pos = self.pos
        prev_steer = [st.steering for st in self.states]
        collisions = [False, False]
        for _ in range(self.n_sub):
            res = self.sim.step(cmds)
            collisions = [a or b for a, b in zip(collisions, res.collisions)]
            if res.done:
                break
        self.t = self.sim.t
        self.pos = [self.track_pos(i) for i in range(2)]
        finished = False
        if not self.rl.closed:
            finished = max(p.s for p in self.pos) > self.rl.length - self.cfg.end_margin
        self.done = (any(collisions) or finished
                     or self.t >= self.cfg.episode_time - 1e-9)
        rewards, comps = [], []
        for i in self.learners:
            r, c = compute_reward(self.states[i], prev_pos[i], self.pos[i], self.pos[1 - i],
                                  prev_steer[i], collisions[i], self.rl, self.cfg.weights)
            rewards.append(r)
            comps.append(c)
        obs = [self.observe(i) for i in self.learners] if observe else []
        return StepOut(obs, rewards, comps, self.done, collisions)

    def lead(self, i: int = 0) -> float:
        """Raceline progress of agent ``i`` ahead of the other car (m)."""
        return progress_delta(self.rl, self.pos[1 - i].s, self.pos[i].s)


def heading_from_velocity(vx: float, vy: float, fallback: float) -> float:
    return math.atan2(vy, vx) if math.hypot(vx, vy) > 0.2 else fallback
