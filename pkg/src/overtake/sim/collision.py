"""Collision checks: car footprint vs map, and car vs car."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .grid import OccupancyGrid
from .vehicle import VehicleParams, VehicleState, footprint_corners


def footprint_samples(params: VehicleParams, spacing: float) -> np.ndarray:
    """Local-frame sample points covering the footprint at <= ``spacing``."""
    hl, hw = params.length / 2.0, params.width / 2.0
    nx = max(int(math.ceil(params.length / spacing)), 1) + 1
    ny = max(int(math.ceil(params.width / spacing)), 1) + 1
    gx, gy = np.meshgrid(np.linspace(-hl, hl, nx), np.linspace(-hw, hw, ny))
    return np.column_stack([gx.ravel(), gy.ravel()])


def hits_map(grid: OccupancyGrid, state: VehicleState, samples: np.ndarray) -> bool:
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    xs = state.x + samples[:, 0] * c - samples[:, 1] * s
    ys = state.y + samples[:, 0] * s + samples[:, 1] * c
    return bool(grid.occupied_at(xs, ys).any())


def rects_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals given as (4, 2) corners.

    Touching edges (zero-length overlap) count as separated.
    """
    for corners in (corners_a, corners_b):
        for i in range(2):
            edge = corners[i + 1] - corners[i]
            axis = np.array([-edge[1], edge[0]])
            pa = corners_a @ axis
            pb = corners_b @ axis
            if pa.max() <= pb.min() or pb.max() <= pa.min():
                return False
    return True


def clearance_map(grid: OccupancyGrid) -> np.ndarray:
    """Distance (m) from each cell center to the nearest occupied cell center.

    The map border counts as occupied, matching ``occupied_at`` off the map.
    """
    free = np.pad(~grid.cells, 1, constant_values=False)
    return ndimage.distance_transform_edt(free)[1:-1, 1:-1] * grid.resolution


def _clear_of_map(grid, clearance, state, radius) -> bool:
    # every sampled cell center is within radius + one cell diagonal of the
    # center cell's center, so more clearance than that rules out a hit
    if clearance is None:
        return False
    col = int(math.floor((state.x - grid.origin[0]) / grid.resolution))
    row = int(math.floor((state.y - grid.origin[1]) / grid.resolution))
    if not (0 <= row < grid.height and 0 <= col < grid.width):
        return False
    return clearance[row, col] > radius + grid.resolution * math.sqrt(2.0)


def check_collisions(grid: OccupancyGrid, states, params: VehicleParams,
                     samples: np.ndarray | None = None,
                     clearance: np.ndarray | None = None) -> list[bool]:
    """Per-agent flag: footprint touches an occupied cell or another car.

    ``clearance`` (from clearance_map) only skips work; results are identical.
    """
    if samples is None:
        samples = footprint_samples(params, grid.resolution)
    radius = math.hypot(params.length, params.width) / 2.0
    flags = [False if _clear_of_map(grid, clearance, st, radius) else hits_map(grid, st, samples)
             for st in states]
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            a, b = states[i], states[j]
            if math.hypot(a.x - b.x, a.y - b.y) >= 2 * radius:
                continue
            if rects_overlap(footprint_corners(a, params), footprint_corners(b, params)):
                flags[i] = flags[j] = True
    return flags
