"""Multi-agent stepping: dynamics, per-agent scans with opponents rasterized, collisions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collision import check_collisions, clearance_map, footprint_samples
from .grid import OccupancyGrid, rasterize_vehicle
from .lidar import LidarConfig, LidarScan, raycast_lidar, sensor_pose
from .vehicle import VehicleParams, VehicleState, step_bicycle, wrap_angle


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    n_agents: int = 2
    lidar_rate: float = 10.0
    camera_rate: float = 1.0
    seed: int = 0
    timeout: float = 60.0
    lidar: LidarConfig = field(default_factory=LidarConfig)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.n_agents not in (1, 2):
            raise ValueError("n_agents must be 1 or 2")


@dataclass
class StepResult:
    states: list[VehicleState]
    scans: list[LidarScan | None]
    collisions: list[bool]
    done: bool
    camera_due: bool = False


class RaceSim:
    """Deterministic simulator for one or two cars on an occupancy grid."""

    def __init__(self, grid: OccupancyGrid, config: SimConfig = SimConfig(),
                 params: VehicleParams = VehicleParams()):
        self.grid = grid
        self.config = config
        self.params = params
        self._samples = footprint_samples(params, grid.resolution)
        self._clearance = clearance_map(grid)
        self.states: list[VehicleState] = []
        self.done = True
        self.t = 0.0
        self._step = 0

    def reset(self, spawns) -> StepResult:
        if len(spawns) != self.config.n_agents:
            raise ValueError(f"expected {self.config.n_agents} spawn poses, got {len(spawns)}")
        self.rng = np.random.default_rng(self.config.seed)
        self.states = [VehicleState(x=s.x, y=s.y, yaw=wrap_angle(s.yaw), v=s.v,
                                    steering=s.steering) for s in spawns]
        self.t = 0.0
        self._step = 0
        self.done = False
        collisions = check_collisions(self.grid, self.states, self.params, self._samples,
                                      self._clearance)
        return StepResult(list(self.states), self.scan_all(), collisions, False, True)

    def _due(self, rate: float) -> bool:
        if rate <= 0:
            return False
        period = max(int(round(1.0 / (rate * self.config.dt))), 1)
        return self._step % period == 0

    def scan_grid(self, agent: int) -> OccupancyGrid:
        """Static map plus every other car, as seen by ``agent``'s LiDAR."""
        grid = self.grid
        for j, st in enumerate(self.states):
            if j != agent:
                try:
                    grid = rasterize_vehicle(grid, st, self.params)
                except ValueError:
                    pass
        return grid

    def scan(self, agent: int) -> LidarScan:
        cfg = self.config.lidar
        pose = sensor_pose(self.states[agent].pose, cfg.mount)
        return raycast_lidar(self.scan_grid(agent), pose, cfg, t=self.t, rng=self.rng)

    def scan_all(self) -> list[LidarScan | None]:
        out = []
        for i in range(len(self.states)):
            try:
                out.append(self.scan(i))
            except ValueError:
                out.append(None)
        return out

    def step(self, actions) -> StepResult:
        """Integrate every agent by one ``dt`` with (steer, speed) commands."""
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        if len(actions) != len(self.states):
            raise ValueError("one action per agent required")
        self.states = [step_bicycle(st, a, self.params, self.config.dt)
                       for st, a in zip(self.states, actions)]
        self._step += 1
        self.t = self._step * self.config.dt
        collisions = check_collisions(self.grid, self.states, self.params, self._samples,
                                      self._clearance)
        self.done = any(collisions) or self.t >= self.config.timeout - 1e-9
        if self._due(self.config.lidar_rate):
            scans = self.scan_all()
        else:
            scans = [None] * len(self.states)
        return StepResult(list(self.states), scans, collisions, self.done,
                          self._due(self.config.camera_rate))
