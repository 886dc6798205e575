"""Minimum-curvature raceline and arc-length queries along it.

The raceline is the track centerline shifted along its left normal by a
per-station lateral offset. Offsets are chosen to minimize the sum of squared
three-point curvatures of the shifted line, subject to the track widths less a
safety margin.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

log = logging.getLogger(__name__)

DEFAULT_SPACING = 0.1


@dataclass
class Track:
    centerline: np.ndarray
    w_left: np.ndarray
    w_right: np.ndarray
    closed: bool = False

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float)
        n = len(self.centerline)
        self.w_left = np.broadcast_to(np.asarray(self.w_left, dtype=float), (n,)).copy()
        self.w_right = np.broadcast_to(np.asarray(self.w_right, dtype=float), (n,)).copy()
        if n < 8:
            raise ValueError(f"track needs at least 8 points, got {n}")
        seg = np.diff(self.centerline, axis=0)
        if np.any(np.hypot(seg[:, 0], seg[:, 1]) == 0):
            raise ValueError("consecutive centerline points must be distinct")


@dataclass
class Raceline:
    waypoints: np.ndarray
    s: np.ndarray
    heading: np.ndarray
    curvature: np.ndarray
    closed: bool = False

    @property
    def length(self) -> float:
        """Total arc length; includes the closing segment for loops."""
        if self.closed:
            return float(self.s[-1] + np.linalg.norm(self.waypoints[0] - self.waypoints[-1]))
        return float(self.s[-1])

    @property
    def spacing(self) -> float:
        return float(np.median(np.diff(self.s)))

    def __len__(self):
        return len(self.s)


# ---------------------------------------------------------------------------
# geometry helpers


def arc_length(points: np.ndarray, closed: bool = False) -> np.ndarray:
    pts = np.vstack([points, points[:1]]) if closed else points
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def three_point_curvature(points: np.ndarray, closed: bool = False) -> np.ndarray:
    """Signed curvature of the circle through each point and its neighbours.

    Positive for left turns. Open lines copy the neighbouring value at the ends.
    """
    if closed:
        a, b, c = np.roll(points, 1, axis=0), points, np.roll(points, -1, axis=0)
    else:
        a, b, c = points[:-2], points[1:-1], points[2:]
    ab, bc, ac = b - a, c - b, c - a
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = np.hypot(*ab.T) * np.hypot(*bc.T) * np.hypot(*ac.T)
    k = 2.0 * cross / np.where(denom > 0, denom, np.inf)
    if closed:
        return k
    return np.concatenate([[k[0]], k, [k[-1]]])


def _interior_curvature(points, closed):
    k = three_point_curvature(points, closed)
    return k if closed else k[1:-1]


def headings(points: np.ndarray, closed: bool = False) -> np.ndarray:
    if closed:
        d = np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)
    else:
        d = np.gradient(points, axis=0)
    return np.arctan2(d[:, 1], d[:, 0])


def left_normals(points: np.ndarray, closed: bool = False) -> np.ndarray:
    h = headings(points, closed)
    return np.column_stack([-np.sin(h), np.cos(h)])


# ---------------------------------------------------------------------------
# operations


def resample_centerline(track: Track, spacing: float = DEFAULT_SPACING) -> Track:
    """Arc-length-uniform resampling by linear interpolation.

    Spacing is adjusted down slightly so the stations divide the length evenly.
    """
    if not spacing > 0:
        raise ValueError("spacing must be > 0")
    pts = track.centerline
    wl, wr = track.w_left, track.w_right
    if track.closed:
        pts = np.vstack([pts, pts[:1]])
        wl = np.append(wl, wl[0])
        wr = np.append(wr, wr[0])
    s = arc_length(pts)
    total = s[-1]
    if total <= 0:
        raise ValueError("degenerate (zero-length) centerline")
    n_seg = max(int(round(total / spacing)), 1)
    stations = np.linspace(0.0, total, n_seg + 1)
    if track.closed:
        stations = stations[:-1]
    out = np.column_stack([np.interp(stations, s, pts[:, 0]), np.interp(stations, s, pts[:, 1])])
    return Track(out, np.interp(stations, s, wl), np.interp(stations, s, wr), track.closed)


def curvature_cost(points: np.ndarray, closed: bool) -> float:
    k = _interior_curvature(points, closed)
    return float(np.sum(k * k))


def _curvature_jacobian(center, normals, alpha, closed, h=1e-6):
    """Sparse d(kappa)/d(alpha) by coloured central differences.

    Each curvature depends on three neighbouring offsets, so offsets whose
    indices differ by at least three can be perturbed together.
    """
    n = len(alpha)
    colors = np.arange(n) % 3
    if closed and n % 3:
        tail = n - n % 3
        colors[tail:] = 3 + np.arange(n - tail)
    n_rows = n if closed else n - 2
    rows, cols, vals = [], [], []
    row_idx = np.arange(n_rows)
    row_center = row_idx if closed else row_idx + 1
    for c in np.unique(colors):
        pert = colors == c
        ap = alpha + h * pert
        am = alpha - h * pert
        dk = (_interior_curvature(center + ap[:, None] * normals, closed)
              - _interior_curvature(center + am[:, None] * normals, closed)) / (2 * h)
        for off in (-1, 0, 1):
            j = row_center + off
            if closed:
                j = j % n
            ok = (j >= 0) & (j < n)
            ok &= pert[np.clip(j, 0, n - 1)]
            rows.append(row_idx[ok])
            cols.append(j[ok])
            vals.append(dk[ok])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n_rows, n))


def min_curvature_raceline(track: Track, iterations: int = 50, step_size: float = 1.0,
                           margin: float = 0.255, history: list | None = None) -> Raceline:
    """Optimize lateral offsets of a resampled ``track`` for minimum summed curvature^2.

    Each iteration linearizes the curvatures around the current offsets and
    takes a damped Gauss-Newton step scaled by ``step_size``, then projects the
    offsets back into their bounds. A step is only accepted if the true
    objective decreases; otherwise the damping grows and the step is retried.
    Accepted objective values are appended to ``history`` when given.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    lo = -track.w_right + margin
    hi = track.w_left - margin
    if np.any(lo > hi):
        raise ValueError(f"track narrower than twice the margin ({margin:.3f} m) somewhere")
    center = track.centerline
    normals = left_normals(center, track.closed)
    alpha = np.clip(np.zeros(len(center)), lo, hi)
    cost = curvature_cost(center + alpha[:, None] * normals, track.closed)
    if history is not None:
        history.append(cost)
    damping = 1e-3
    for it in range(iterations):
        if cost == 0.0:
            break
        k = _interior_curvature(center + alpha[:, None] * normals, track.closed)
        J = _curvature_jacobian(center, normals, alpha, track.closed)
        g = J.T @ k
        JtJ = (J.T @ J).tocsc()
        scale = JtJ.diagonal().max()
        # variables pinned at a bound with the gradient pushing outward stay fixed
        fixed = ((alpha <= lo + 1e-12) & (g > 0)) | ((alpha >= hi - 1e-12) & (g < 0))
        free = ~fixed
        if not free.any():
            break
        H = JtJ[free][:, free]
        accepted = False
        for _ in range(30):
            A = H + damping * scale * sp.identity(int(free.sum()), format="csc")
            d = np.zeros_like(alpha)
            d[free] = -spsolve(A, g[free])
            trial = np.clip(alpha + step_size * d, lo, hi)
            trial_cost = curvature_cost(center + trial[:, None] * normals, track.closed)
            if trial_cost < cost:
                accepted = True
                break
            damping *= 4.0
        if not accepted:
            log.debug("min_curvature_raceline: no descent at iteration %d", it)
            break
        rel = (cost - trial_cost) / cost
        alpha, cost = trial, trial_cost
        damping = max(damping * 0.3, 1e-9)
        if history is not None:
            history.append(cost)
        if rel < 1e-10:
            break
    return build_raceline(center + alpha[:, None] * normals, track.closed)


def build_raceline(points: np.ndarray, closed: bool = False) -> Raceline:
    points = np.asarray(points, dtype=float)
    s = arc_length(points, closed)[:len(points)]
    return Raceline(points, s, headings(points, closed), three_point_curvature(points, closed),
                    closed)


def centerline_raceline(track: Track) -> Raceline:
    return build_raceline(track.centerline, track.closed)


def _segments(rl: Raceline):
    a = rl.waypoints
    b = np.roll(a, -1, axis=0) if rl.closed else a[1:]
    a = a if rl.closed else a[:-1]
    return a, b


def project_to_raceline(rl: Raceline, point) -> tuple[float, float, int]:
    """Nearest-segment projection: (arc length, signed lateral offset, segment index).

    Lateral offset is positive to the left of the direction of travel.
    """
    p = np.asarray(point, dtype=float)
    a, b = _segments(rl)
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / L2, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d2 = np.einsum("ij,ij->i", p - proj, p - proj)
    k = int(np.argmin(d2))
    seg_len = float(np.sqrt(L2[k]))
    cross = ab[k, 0] * (p[1] - proj[k, 1]) - ab[k, 1] * (p[0] - proj[k, 0])
    lateral = float(np.sign(cross) * np.sqrt(d2[k]))
    s = float(rl.s[k] + t[k] * seg_len)
    idx = k
    if t[k] >= 1.0:
        idx = (k + 1) % len(rl) if rl.closed else k + 1
        s = float(rl.s[idx]) if idx != 0 else 0.0
    if rl.closed:
        s %= rl.length
    return s, lateral, idx


def interpolate(rl: Raceline, s_query) -> np.ndarray:
    """Points at arc lengths ``s_query`` (wrapping on loops, clamped on open lines)."""
    s_query = np.asarray(s_query, dtype=float)
    if rl.closed:
        L = rl.length
        s_ext = np.append(rl.s, L)
        pts = np.vstack([rl.waypoints, rl.waypoints[:1]])
        q = np.mod(s_query, L)
    else:
        s_ext, pts, q = rl.s, rl.waypoints, s_query
    return np.column_stack([np.interp(q, s_ext, pts[:, 0]), np.interp(q, s_ext, pts[:, 1])])


def heading_at(rl: Raceline, s: float) -> float:
    """Direction of the raceline segment containing arc length ``s``."""
    if rl.closed:
        s = s % rl.length
    k = int(np.clip(np.searchsorted(rl.s, s, side="right") - 1, 0, len(rl) - 1))
    if not rl.closed and k >= len(rl) - 1:
        k = len(rl) - 2
    a = rl.waypoints[k]
    b = rl.waypoints[(k + 1) % len(rl)]
    return float(np.arctan2(b[1] - a[1], b[0] - a[0]))


def future_waypoints(rl: Raceline, s: float, n: int = 10,
                     spacing: float = DEFAULT_SPACING) -> tuple[np.ndarray, bool]:
    """``n`` points ahead of ``s`` at uniform arc spacing.

    Returns the points and a flag that is set when an open line ran out and the
    final point was repeated.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    q = s + spacing * np.arange(1, n + 1)
    exhausted = (not rl.closed) and bool(q[-1] > rl.length)
    return interpolate(rl, q), exhausted


def progress_delta(rl: Raceline, s_prev: float, s_now: float) -> float:
    """Signed forward progress; on loops the shortest wrapped difference."""
    d = s_now - s_prev
    if rl.closed:
        L = rl.length
        d = (d + L / 2.0) % L - L / 2.0
    return float(d)


# ---------------------------------------------------------------------------
# files

RACELINE_COLUMNS = ("s", "x", "y", "heading", "curvature")


def save_raceline_csv(rl: Raceline, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RACELINE_COLUMNS)
        for row in zip(rl.s, rl.waypoints[:, 0], rl.waypoints[:, 1], rl.heading, rl.curvature):
            w.writerow([f"{v:.9f}" for v in row])


def load_raceline_csv(path: str | Path, closed: bool | None = None) -> Raceline:
    """Read a raceline CSV. Loop closure is inferred from the end gap unless given."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = [h.strip() for h in next(reader)]
        if tuple(header) != RACELINE_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(RACELINE_COLUMNS)}, got {header}")
        rows = np.array([[float(v) for v in r] for r in reader if r])
    pts = rows[:, 1:3]
    if closed is None:
        closed = _looks_closed(pts)
    return Raceline(pts, rows[:, 0], rows[:, 3], rows[:, 4], closed)


def _looks_closed(pts: np.ndarray) -> bool:
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return bool(np.linalg.norm(pts[0] - pts[-1]) <= 1.5 * np.median(seg))


def load_track_csv(path: str | Path, closed: bool | None = None) -> Track:
    """Centerline CSV with columns x, y, w_left, w_right (header optional)."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and r[0].strip()]
    names = ["x", "y", "w_left", "w_right"]
    order = [0, 1, 2, 3]
    try:
        float(rows[0][0])
    except ValueError:
        header = [h.strip().lstrip("#").strip() for h in rows.pop(0)]
        order = [header.index(n) for n in names]
    data = np.array([[float(r[i]) for i in order] for r in rows])
    pts = data[:, :2]
    if closed is None:
        closed = _looks_closed(pts)
    if closed and np.allclose(pts[0], pts[-1]):
        data = data[:-1]
    return Track(data[:, :2], data[:, 2], data[:, 3], closed)


def save_track_csv(track: Track, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "w_left", "w_right"])
        for (x, y), wl, wr in zip(track.centerline, track.w_left, track.w_right):
            w.writerow([f"{x:.9f}", f"{y:.9f}", f"{wl:.9f}", f"{wr:.9f}"])


def straight_track(length: float, half_width: float, spacing: float = 1.0) -> Track:
    n = int(round(length / spacing)) + 1
    xs = np.linspace(0.0, length, n)
    return Track(np.column_stack([xs, np.zeros(n)]), half_width, half_width, closed=False)


def ring_track(radius: float, half_width: float, n: int = 200) -> Track:
    """Counter-clockwise circle; the left width faces the center."""
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return Track(np.column_stack([radius * np.cos(th), radius * np.sin(th)]), half_width,
                 half_width, closed=True)
