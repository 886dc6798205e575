"""Occupancy grid maps: storage, file I/O and vehicle rasterization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .vehicle import VehicleParams, VehicleState


@dataclass
class OccupancyGrid:
    """Binary map. ``cells[row, col]`` with row along +y, col along +x.

    ``origin`` is the world position of the outer corner of cell (0, 0).
    """

    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray

    def __post_init__(self):
        self.cells = np.ascontiguousarray(self.cells, dtype=bool)
        if self.cells.ndim != 2:
            raise ValueError("cells must be a 2D array")
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return (ox, ox + self.width * self.resolution, oy, oy + self.height * self.resolution)

    def copy(self) -> OccupancyGrid:
        return OccupancyGrid(self.resolution, self.origin, self.cells.copy())

    def world_to_cell(self, x, y):
        col = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(int)
        row = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(int)
        return row, col

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def inside(self, x, y) -> np.ndarray:
        row, col = self.world_to_cell(x, y)
        return (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)

    def occupied_at(self, x, y) -> np.ndarray:
        """Occupancy at world points; points off the map count as occupied."""
        row, col = self.world_to_cell(x, y)
        ok = (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)
        out = np.ones(np.shape(row), dtype=bool)
        out[ok] = self.cells[row[ok], col[ok]]
        return out


def rasterize_vehicle(grid: OccupancyGrid, state: VehicleState | None,
                      params: VehicleParams) -> OccupancyGrid:
    """Copy of ``grid`` with the car's oriented rectangle marked occupied.

    A cell is marked when its center lies inside the rectangle.
    """
    out = grid.copy()
    if state is None:
        return out
    hl, hw = params.length / 2.0, params.width / 2.0
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    ex = abs(c) * hl + abs(s) * hw
    ey = abs(s) * hl + abs(c) * hw
    x0, x1, y0, y1 = grid.extent
    if state.x - ex < x0 or state.x + ex > x1 or state.y - ey < y0 or state.y + ey > y1:
        raise ValueError(f"vehicle footprint at ({state.x:.3f}, {state.y:.3f}) leaves the grid")

    res = grid.resolution
    c0 = max(int(math.floor((state.x - ex - x0) / res)), 0)
    c1 = min(int(math.ceil((state.x + ex - x0) / res)), grid.width)
    r0 = max(int(math.floor((state.y - ey - y0) / res)), 0)
    r1 = min(int(math.ceil((state.y + ey - y0) / res)), grid.height)
    cx = x0 + (np.arange(c0, c1) + 0.5) * res - state.x
    cy = y0 + (np.arange(r0, r1) + 0.5) * res - state.y
    dx, dy = np.meshgrid(cx, cy)
    along = dx * c + dy * s
    across = -dx * s + dy * c
    mask = (np.abs(along) <= hl) & (np.abs(across) <= hw)
    out.cells[r0:r1, c0:c1] |= mask
    return out


def make_corridor(length: float, width: float, resolution: float = 0.05,
                  wall: float = 0.2, margin: float = 1.0) -> OccupancyGrid:
    """Straight corridor along +x from x=0 to x=length, centered on y=0.

    The ends are closed by walls ``margin`` meters beyond the driveable length.
    """
    half = width / 2.0
    x0, y0 = -margin - wall, -half - wall
    nx = int(round((length + 2 * margin + 2 * wall) / resolution))
    ny = int(round((width + 2 * wall) / resolution))
    grid = OccupancyGrid(resolution, (x0, y0), np.zeros((ny, nx), dtype=bool))
    X, Y = grid.cell_centers()
    occ = (np.abs(Y) >= half) | (X <= -margin) | (X >= length + margin)
    grid.cells[:] = occ
    return grid


def make_ring(radius: float, width: float, resolution: float = 0.05,
              wall: float = 0.2) -> OccupancyGrid:
    """Annular track centered on the origin with centerline ``radius``."""
    outer = radius + width / 2.0
    span = outer + wall
    n = int(math.ceil(2 * span / resolution))
    grid = OccupancyGrid(resolution, (-n * resolution / 2, -n * resolution / 2),
                         np.zeros((n, n), dtype=bool))
    X, Y = grid.cell_centers()
    r = np.hypot(X, Y)
    grid.cells[:] = (r <= radius - width / 2.0) | (r >= outer)
    return grid


# ---------------------------------------------------------------------------
# map files


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: only binary P5 PGM rasters are supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    img = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return img


def _write_pgm(path: Path, img: np.ndarray) -> None:
    h, w = img.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.astype(np.uint8).tobytes())


def load_map(path: str | Path) -> OccupancyGrid:
    """Load a JSON map: header plus flat ``cells`` or a referenced PGM ``image``.

    PGM rows are stored top row first (image convention), so they are flipped
    to the grid's row-along-+y convention; pixel values >= 128 are free.
    """
    path = Path(path)
    meta = json.loads(path.read_text())
    res = float(meta["resolution"])
    origin = tuple(meta["origin"])[:2]
    width, height = int(meta["width"]), int(meta["height"])
    if "cells" in meta:
        flat = np.asarray(meta["cells"], dtype=np.uint8)
        if flat.size != width * height:
            raise ValueError(f"{path}: cells has {flat.size} entries, expected {width * height}")
        cells = flat.reshape(height, width).astype(bool)
    elif "image" in meta:
        img = _read_pgm(path.parent / meta["image"])
        if img.shape != (height, width):
            raise ValueError(f"{path}: raster is {img.shape[::-1]}, header says {(width, height)}")
        cells = (img < 128)[::-1]
    else:
        raise ValueError(f"{path}: map needs either 'cells' or 'image'")
    return OccupancyGrid(res, origin, cells)


def save_map(grid: OccupancyGrid, path: str | Path, pgm: bool = False) -> None:
    path = Path(path)
    meta = {"resolution": grid.resolution, "origin": list(grid.origin),
            "width": grid.width, "height": grid.height}
    if pgm:
        img_name = path.with_suffix(".pgm").name
        _write_pgm(path.parent / img_name, np.where(grid.cells[::-1], 0, 255))
        meta["image"] = img_name
    else:
        meta["cells"] = grid.cells.astype(np.uint8).ravel().tolist()
    path.write_text(json.dumps(meta))


def load_spawns(path: str | Path) -> list[VehicleState]:
    """Spawn file: JSON list of ``{x, y, yaw, v}``."""
    items = json.loads(Path(path).read_text())
    return [VehicleState(x=float(d["x"]), y=float(d["y"]), yaw=float(d.get("yaw", 0.0)),
                         v=float(d.get("v", 0.0))) for d in items]


def save_spawns(states, path: str | Path) -> None:
    Path(path).write_text(json.dumps([{"x": s.x, "y": s.y, "yaw": s.yaw, "v": s.v} for s in states],
                                     indent=1))
