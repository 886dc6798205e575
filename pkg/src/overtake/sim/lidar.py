"""Raycast 2D LiDAR over an occupancy grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .grid import OccupancyGrid

N_BEAMS = 1080
DEFAULT_FOV = math.radians(270.0)


@dataclass(frozen=True)
class LidarConfig:
    n_beams: int = N_BEAMS
    fov: float = DEFAULT_FOV
    max_range: float = 10.0
    range_noise: float = 0.0
    # sensor mount relative to the vehicle base: (forward m, left m, yaw rad)
    mount: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class LidarScan:
    ranges: np.ndarray
    fov: float
    max_range: float
    pose: tuple[float, float, float]
    t: float = 0.0
    angles: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.angles is None:
            self.angles = beam_angles(len(self.ranges), self.fov)

    @property
    def n_beams(self) -> int:
        return len(self.ranges)


def beam_angles(n_beams: int = N_BEAMS, fov: float = DEFAULT_FOV) -> np.ndarray:
    """Beam angles relative to the sensor heading, evenly spaced across ``fov``."""
    return np.linspace(-fov / 2.0, fov / 2.0, n_beams)


def sensor_pose(vehicle_pose, mount) -> tuple[float, float, float]:
    x, y, yaw = vehicle_pose
    fx, fy, fyaw = mount
    c, s = math.cos(yaw), math.sin(yaw)
    return (x + c * fx - s * fy, y + s * fx + c * fy, yaw + fyaw)


@numba.njit(cache=True)
def _dda(cells, res, ox, oy, px, py, angles, max_range, out):
    h, w = cells.shape
    gx = (px - ox) / res
    gy = (py - oy) / res
    limit = max_range / res
    for k in range(angles.shape[0]):
        dx = math.cos(angles[k])
        dy = math.sin(angles[k])
        ix = int(math.floor(gx))
        iy = int(math.floor(gy))
        if dx > 0:
            step_x = 1
            t_dx = 1.0 / dx
            t_max_x = (ix + 1 - gx) / dx
        elif dx < 0:
            step_x = -1
            t_dx = -1.0 / dx
            t_max_x = (gx - ix) / -dx
        else:
            step_x = 0
            t_dx = math.inf
            t_max_x = math.inf
        if dy > 0:
            step_y = 1
            t_dy = 1.0 / dy
            t_max_y = (iy + 1 - gy) / dy
        elif dy < 0:
            step_y = -1
            t_dy = -1.0 / dy
            t_max_y = (gy - iy) / -dy
        else:
            step_y = 0
            t_dy = math.inf
            t_max_y = math.inf
        hit = max_range
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                ix += step_x
                t_max_x += t_dx
            else:
                t = t_max_y
                iy += step_y
                t_max_y += t_dy
            if t > limit:
                break
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            if cells[iy, ix]:
                hit = t * res
                break
        out[k] = hit


def raycast_lidar(grid: OccupancyGrid, pose, config: LidarConfig = LidarConfig(),
                  t: float = 0.0, rng: np.random.Generator | None = None) -> LidarScan:
    """Cast every beam from the sensor ``pose`` (x, y, yaw) to the first occupied cell.

    Range is the distance along the beam to where it enters the first occupied
    cell, or ``max_range`` if nothing is hit (leaving the map counts as no hit).
    """
    px, py, yaw = (float(v) for v in pose)
    if grid.occupied_at(px, py):
        raise ValueError(f"sensor at ({px:.3f}, {py:.3f}) is inside an occupied cell")
    rel = beam_angles(config.n_beams, config.fov)
    ranges = np.empty(config.n_beams)
    _dda(grid.cells, grid.resolution, grid.origin[0], grid.origin[1], px, py, rel + yaw,
         config.max_range, ranges)
    if config.range_noise > 0:
        if rng is None:
            raise ValueError("range_noise > 0 needs an rng")
        hit = ranges < config.max_range
        ranges[hit] += rng.normal(0.0, config.range_noise, hit.sum())
        np.clip(ranges, 1e-3, config.max_range, out=ranges)
    return LidarScan(ranges=ranges, fov=config.fov, max_range=config.max_range,
                     pose=(px, py, yaw), t=t, angles=rel)


def scan_points(scan: LidarScan, frame_pose=None) -> tuple[np.ndarray, np.ndarray]:
    """Beam endpoints of returns closer than max_range.

    Points are in the sensor frame, or in the frame whose pose (in the same
    world frame as ``scan.pose``) is ``frame_pose``. Also returns the beam
    indices of the kept points.
    """
    keep = np.flatnonzero(scan.ranges < scan.max_range)
    r = scan.ranges[keep]
    a = scan.angles[keep]
    pts = np.column_stack([r * np.cos(a), r * np.sin(a)])
    if frame_pose is not None:
        sx, sy, syaw = scan.pose
        fx, fy, fyaw = frame_pose
        c, s = math.cos(syaw), math.sin(syaw)
        world = pts @ np.array([[c, s], [-s, c]]) + np.array([sx, sy])
        c, s = math.cos(fyaw), math.sin(fyaw)
        pts = (world - np.array([fx, fy])) @ np.array([[c, -s], [s, c]])
    return pts, keep
