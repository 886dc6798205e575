"""Opponent measurements from LiDAR clusters and a synthetic camera detector."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sim.grid import OccupancyGrid
from .sim.lidar import LidarConfig, LidarScan, raycast_lidar, scan_points
from .sim.vehicle import VehicleParams, VehicleState

CHI2_2DOF_99 = 9.21


@dataclass
class PointCluster:
    points: np.ndarray
    beams: np.ndarray

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def __len__(self):
        return len(self.points)


@dataclass
class OrientedRect:
    """Fitted rectangle. ``yaw`` is the fit angle in [0, pi/2).

    ``half_len >= half_wid``; ``long_axis_yaw`` is the direction of the long
    side (``yaw`` or ``yaw + pi/2``).
    """

    center: np.ndarray
    yaw: float
    half_len: float
    half_wid: float
    long_axis_yaw: float
    degenerate: bool = False

    def axis_extents(self) -> tuple[float, float]:
        """Half extents along (yaw, yaw + pi/2)."""
        if math.isclose(self.long_axis_yaw, self.yaw):
            return self.half_len, self.half_wid
        return self.half_wid, self.half_len

    def corners(self) -> np.ndarray:
        ea, eb = self.axis_extents()
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        u, v = np.array([c, s]), np.array([-s, c])
        return np.array([self.center + sa * ea * u + sb * eb * v
                         for sa, sb in ((-1, -1), (1, -1), (1, 1), (-1, 1))])


# ---------------------------------------------------------------------------
# LiDAR


def cluster_scan(scan: LidarScan, agent_pose=None, d_min: float = 0.1, k: float = 1.5,
                 min_size: int = 4) -> list[PointCluster]:
    """Split returns into clusters with an adaptive breakpoint threshold.

    Neighbouring returns stay together while their gap is below
    ``max(d_min, k * range * beam_step)``. Missing beams (max-range) always
    split. Points come out in the frame of ``agent_pose`` (sensor frame if None).
    """
    pts, beams = scan_points(scan, agent_pose)
    if len(pts) == 0:
        return []
    step = scan.fov / (scan.n_beams - 1)
    ranges = scan.ranges[beams]
    gaps = np.hypot(*np.diff(pts, axis=0).T)
    thresh = np.maximum(d_min, k * ranges[:-1] * step)
    breaks = (gaps >= thresh) | (np.diff(beams) != 1)
    starts = np.concatenate([[0], np.flatnonzero(breaks) + 1, [len(pts)]])
    out = []
    for a, b in zip(starts[:-1], starts[1:]):
        if b - a >= min_size:
            out.append(PointCluster(pts[a:b], beams[a:b]))
    return out


_ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _scatter_sums(P: np.ndarray) -> np.ndarray:
    """Prefix sums of (1, x, y, xx, xy, yy), row k covering the first k points."""
    x, y = P[:, 0], P[:, 1]
    cols = np.column_stack([np.ones(len(P)), x, y, x * x, x * y, y * y])
    return np.vstack([np.zeros(6), np.cumsum(cols, axis=0)])


def _scatter(sums: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centered scatter entries (sxx, sxy, syy) from rows of summed moments."""
    n = np.maximum(sums[:, 0], 1.0)
    mx, my = sums[:, 1] / n, sums[:, 2] / n
    return (sums[:, 3] - n * mx * mx, sums[:, 4] - n * mx * my, sums[:, 5] - n * my * my)


def _refine_orientation(P: np.ndarray, min_run: int = 3, f_crit: float = 20.0) -> float:
    """Two perpendicular lines fitted to points in scan order.

    Along the outline the two seen faces are contiguous runs, so every split
    point is tried; each split has a closed-form best shared normal (smallest
    eigenvector of the first run's scatter plus the second's rotated by 90
    degrees). The split with the least residual wins, but only if it beats the
    single-line fit by an F ratio above ``f_crit``: with one face in view a
    spurious split otherwise absorbs a few noisy points. Runs shorter than
    ``min_run`` are not considered.
    """
    n = len(P)
    pre = _scatter_sums(P)
    splits = np.r_[0, np.arange(min_run, n - min_run + 1)] if n >= 2 * min_run else np.r_[0]
    pre, suf = pre[splits], pre[-1] - pre[splits]
    axx, axy, ayy = _scatter(pre)
    bxx, bxy, byy = _scatter(suf)
    # rotating the second run's scatter by 90 degrees swaps xx/yy and flips xy
    mxx, mxy, myy = axx + byy, axy - bxy, ayy + bxx
    lam = (mxx + myy) / 2 - np.sqrt(((mxx - myy) / 2) ** 2 + mxy ** 2)
    k = int(np.argmin(lam))
    if k and (lam[0] - lam[k]) * (n - 4) < f_crit * max(lam[k], 1e-18):
        k = 0
    # smallest eigenvector of [[mxx, mxy], [mxy, myy]]
    theta_n = 0.5 * math.atan2(2 * mxy[k], mxx[k] - myy[k]) + math.pi / 2
    # the normal of the first run's line; its direction is the fit axis
    return (theta_n + math.pi / 2) % (math.pi / 2)


def fit_rectangle(cluster, step_deg: float = 1.0, d0: float = 0.01,
                  min_half_wid: float = 0.01, refine: bool = True) -> OrientedRect:
    """L-shape fit by the closeness criterion over orientations in [0, 90) degrees.

    For each candidate orientation every point is scored by the inverse of its
    distance to the nearer bounding edge (distances floored at ``d0``); the
    highest total wins, first (smallest angle) on ties. With ``refine`` the
    winning angle is then replaced by a two-perpendicular-line least squares
    fit over the scan-ordered points (see ``_refine_orientation``), which
    removes the search quantization. Points are expected in scan order.
    """
    P = np.asarray(getattr(cluster, "points", cluster), dtype=float)
    thetas = np.deg2rad(np.arange(0.0, 90.0, step_deg))
    c, s = np.cos(thetas), np.sin(thetas)
    C1 = P @ np.vstack([c, s])
    C2 = P @ np.vstack([-s, c])
    D1 = np.minimum(C1.max(axis=0) - C1, C1 - C1.min(axis=0))
    D2 = np.minimum(C2.max(axis=0) - C2, C2 - C2.min(axis=0))
    score = (1.0 / np.maximum(np.minimum(D1, D2), d0)).sum(axis=0)
    theta = float(thetas[int(np.argmax(score))])
    if refine and len(P) >= 3:
        theta = _refine_orientation(P)
    u = np.array([math.cos(theta), math.sin(theta)])
    v = np.array([-math.sin(theta), math.cos(theta)])
    c1, c2 = P @ u, P @ v
    m1, m2 = (c1.max() + c1.min()) / 2, (c2.max() + c2.min()) / 2
    e1, e2 = (c1.max() - c1.min()) / 2, (c2.max() - c2.min()) / 2
    center = m1 * u + m2 * v
    degenerate = min(e1, e2) < min_half_wid
    long_axis = theta if e1 >= e2 else theta + math.pi / 2
    hl, hw = max(e1, e2), max(min(e1, e2), min_half_wid)
    return OrientedRect(center, theta, hl, hw, long_axis, degenerate)


def complete_rectangle(rect: OrientedRect, sensor_xy, length: float,
                       width: float) -> OrientedRect:
    """Grow a partially seen rectangle to the known car size, away from the sensor.

    The longest visible side is matched to whichever car dimension it is
    closer to; each axis is then extended on the far side to that dimension.
    """
    ea, eb = rect.axis_extents()
    if rect.degenerate:
        # the clamped short side carries no depth information
        ea, eb = (ea, 0.0) if ea >= eb else (0.0, eb)
    if ea >= eb:
        da = length if abs(2 * ea - length) <= abs(2 * ea - width) else width
        db = width if da == length else length
    else:
        db = length if abs(2 * eb - length) <= abs(2 * eb - width) else width
        da = width if db == length else length
    u = np.array([math.cos(rect.yaw), math.sin(rect.yaw)])
    v = np.array([-math.sin(rect.yaw), math.cos(rect.yaw)])
    away = rect.center - np.asarray(sensor_xy, dtype=float)
    center = rect.center.copy()
    new = []
    for axis, e, d in ((u, ea, da), (v, eb, db)):
        grow = max(d / 2 - e, 0.0)
        center = center + math.copysign(grow, float(away @ axis) or 1.0) * axis
        new.append(max(e, d / 2))
    long_axis = rect.yaw if new[0] >= new[1] else rect.yaw + math.pi / 2
    return OrientedRect(center, rect.yaw, max(new), min(new), long_axis, rect.degenerate)


def mahalanobis2(point, mean, cov) -> float:
    d = np.asarray(point, dtype=float) - np.asarray(mean, dtype=float)
    return float(d @ np.linalg.solve(cov, d))


def select_opponent_cluster(rects, predicted, cov, gate: float = CHI2_2DOF_99):
    """Rect center closest to the prediction in Mahalanobis distance, if gated.

    Returns ``(center, d2)`` or ``None``.
    """
    cov = np.asarray(cov, dtype=float)
    np.linalg.cholesky(cov)
    best = None
    for r in rects:
        center = r.center if isinstance(r, OrientedRect) else np.asarray(r, dtype=float)
        d2 = mahalanobis2(center, predicted, cov)
        if d2 <= gate and (best is None or d2 < best[1]):
            best = (np.asarray(center, dtype=float), d2)
    return best


# ---------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class CameraModel:
    image_w: int = 640
    image_h: int = 480
    hfov: float = math.radians(69.0)
    a: float = 150.0
    b: float = 0.0
    c: float = 0.0
    depth_offset: float = 0.29
    max_range: float = 8.0
    # camera mount relative to the vehicle base: (forward m, left m, yaw rad)
    mount: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be > 0")
        if self.image_w <= 0 or self.image_h <= 0:
            raise ValueError("image size must be positive")
        if not 0 < self.hfov < math.pi:
            raise ValueError("hfov must be in (0, pi)")

    @property
    def focal_px(self) -> float:
        return (self.image_w / 2) / math.tan(self.hfov / 2)


@dataclass
class BBoxDetection:
    cx: float
    cy: float
    bbox_h: float
    bbox_w: float
    depth: float
    t: float = 0.0


def bbox_to_distance(bbox_h: float, cam: CameraModel = CameraModel()) -> float:
    """Reciprocal height-to-distance law ``a / (bbox_h + b) + c``."""
    den = bbox_h + cam.b
    if den <= 0:
        raise ValueError(f"bbox_h + b must be > 0 (bbox_h={bbox_h}, b={cam.b})")
    return cam.a / den + cam.c


def bbox_to_bearing(cx: float, cam: CameraModel = CameraModel()) -> float:
    """Bearing of a pixel column; positive to the left of the optical axis."""
    half = cam.image_w / 2
    return math.atan((half - cx) / half * math.tan(cam.hfov / 2))


def bearing_to_column(bearing: float, cam: CameraModel) -> float:
    half = cam.image_w / 2
    return half - half * math.tan(bearing) / math.tan(cam.hfov / 2)


def distance_to_height(distance: float, cam: CameraModel) -> float:
    return cam.a / (distance - cam.c) - cam.b


def _to_frame(pose, xy) -> np.ndarray:
    x, y, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    d = np.asarray(xy, dtype=float) - np.array([x, y])
    return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])


def surface_distance(point, opponent: VehicleState, params: VehicleParams) -> float:
    """Distance from ``point`` to the opponent's rectangle (0 if inside)."""
    lx, ly = _to_frame(opponent.pose, point)
    dx = max(abs(lx) - params.length / 2, 0.0)
    dy = max(abs(ly) - params.width / 2, 0.0)
    return math.hypot(dx, dy)


def camera_pose(agent_pose, cam: CameraModel):
    x, y, yaw = agent_pose
    fx, fy, fyaw = cam.mount
    c, s = math.cos(yaw), math.sin(yaw)
    return (x + c * fx - s * fy, y + s * fx + c * fy, yaw + fyaw)


def synth_camera_detection(agent_pose, opponent: VehicleState, params: VehicleParams,
                           cam: CameraModel, sigma_px: float = 0.0, sigma_depth: float = 0.0,
                           rng: np.random.Generator | None = None,
                           grid: OccupancyGrid | None = None, t: float = 0.0):
    """Geometrically consistent bounding box + depth return for the opponent.

    Returns ``(BBoxDetection, depth_range)`` or ``None`` when the opponent is
    outside the field of view, too far, or hidden behind the map. The depth
    range is to the nearest opponent surface; consumers add ``cam.depth_offset``.
    """
    pose = camera_pose(agent_pose, cam)
    rel = _to_frame(pose, (opponent.x, opponent.y))
    dist = float(np.hypot(*rel))
    bearing = math.atan2(rel[1], rel[0])
    if abs(bearing) >= cam.hfov / 2 or dist > cam.max_range or dist <= cam.c:
        return None
    surf = surface_distance(pose[:2], opponent, params)
    if grid is not None:
        beam = raycast_lidar(grid, (pose[0], pose[1], pose[2] + bearing),
                             LidarConfig(n_beams=1, fov=0.0, max_range=dist + 1.0))
        if beam.ranges[0] < surf:
            return None
    if (sigma_px > 0 or sigma_depth > 0) and rng is None:
        raise ValueError("noise requested without an rng")
    n_h = rng.normal(0.0, sigma_px) if sigma_px > 0 else 0.0
    n_c = rng.normal(0.0, sigma_px) if sigma_px > 0 else 0.0
    n_d = rng.normal(0.0, sigma_depth) if sigma_depth > 0 else 0.0
    bbox_h = distance_to_height(dist, cam) + n_h
    cx = bearing_to_column(bearing, cam) + n_c
    if not 0 <= cx < cam.image_w or bbox_h + cam.b <= 0:
        return None
    # apparent width: opponent footprint projected across the line of sight
    los = rel / dist
    across = abs(-los[1] * math.cos(opponent.yaw - pose[2]) + los[0] * math.sin(opponent.yaw - pose[2]))
    along = math.sqrt(max(1.0 - across ** 2, 0.0))
    apparent = params.length * across + params.width * along
    depth_range = max(surf + n_d, 1e-3)
    det = BBoxDetection(cx=cx, cy=cam.image_h / 2, bbox_h=bbox_h,
                        bbox_w=cam.focal_px * apparent / dist, depth=depth_range, t=t)
    return det, depth_range


def camera_measurements(det: BBoxDetection, depth_range: float, cam: CameraModel):
    """(range, bearing) pairs for the depth and detector channels."""
    bearing = bbox_to_bearing(det.cx, cam)
    return ((depth_range + cam.depth_offset, bearing),
            (bbox_to_distance(det.bbox_h, cam), bearing))
