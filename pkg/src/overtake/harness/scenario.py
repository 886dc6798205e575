"""Scenario description and the world (map, raceline, spawns) it resolves to."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from ..raceline import (Raceline, centerline_raceline, load_raceline_csv, resample_centerline,
                        straight_track)
from ..sim import OccupancyGrid, VehicleState, load_map, load_spawns, make_corridor

SCRIPTED_PURSUIT, POLICY = "scripted_pursuit", "policy"


@dataclass(frozen=True)
class Scenario:
    map: str | None = None
    raceline: str | None = None
    spawns: str | None = None
    corridor_length: float = 50.0
    corridor_width: float = 2.5
    raceline_spacing: float = 0.1
    opponent: str = SCRIPTED_PURSUIT
    opponent_checkpoint: str | None = None
    opponent_speed_frac: float = 0.4
    lidar_rate: float = 10.0
    camera_rate: float = 1.0
    noise: float = 1.0
    duration: float = 12.0

    def __post_init__(self):
        if not 0 < self.opponent_speed_frac <= 1:
            raise ValueError("opponent_speed_frac must be in (0, 1]")
        if self.opponent not in (SCRIPTED_PURSUIT, POLICY):
            raise ValueError(f"opponent must be {SCRIPTED_PURSUIT!r} or {POLICY!r}")
        if self.opponent == POLICY and not self.opponent_checkpoint:
            raise ValueError("a policy opponent needs opponent_checkpoint")
        if (self.map is None) != (self.raceline is None):
            raise ValueError("map and raceline must be given together (or neither)")
        for name in ("map", "raceline", "spawns", "opponent_checkpoint"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"scenario {name} file not found: {p}")
        if self.duration <= 0 or self.lidar_rate < 0 or self.camera_rate < 0 or self.noise < 0:
            raise ValueError("duration must be > 0; rates and noise must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)


def corridor_world(length: float = 50.0, width: float = 2.5,
                   spacing: float = 0.1) -> tuple[OccupancyGrid, Raceline]:
    """Straight corridor with the centerline as raceline."""
    grid = make_corridor(length, width)
    rl = centerline_raceline(resample_centerline(straight_track(length, width / 2), spacing))
    return grid, rl


def build_world(sc: Scenario) -> tuple[OccupancyGrid, Raceline, list[VehicleState] | None]:
    if sc.map is None:
        grid, rl = corridor_world(sc.corridor_length, sc.corridor_width, sc.raceline_spacing)
    else:
        grid, rl = load_map(sc.map), load_raceline_csv(sc.raceline)
    spawns = load_spawns(sc.spawns) if sc.spawns else None
    if spawns is not None and len(spawns) != 2:
        raise ValueError(f"{sc.spawns}: expected 2 spawn poses, got {len(spawns)}")
    return grid, rl, spawns
