import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from overtake.raceline import (Track, build_raceline, curvature_cost, future_waypoints,
                               load_raceline_csv, load_track_csv,
                               min_curvature_raceline, progress_delta, project_to_raceline,
                               resample_centerline, ring_track, save_raceline_csv,
                               save_track_csv, straight_track, three_point_curvature)


def corner_track(half_width=1.5):
    # 10 m east, quarter circle of radius 3 left, 10 m north
    a = np.column_stack([np.linspace(0, 10, 21), np.zeros(21)])
    th = np.linspace(-np.pi / 2, 0, 20)[1:-1]
    b = np.column_stack([10 + 3 * np.cos(th), 3 + 3 * np.sin(th)])
    c = np.column_stack([np.full(21, 13.0), np.linspace(3, 13, 21)])
    return Track(np.vstack([a, b, c]), half_width, half_width, closed=False)


def test_resample_straight():
    t = resample_centerline(straight_track(10.0, 1.0, spacing=1.25), 1.0)
    assert len(t.centerline) == 11
    assert np.allclose(t.centerline[:, 0], np.arange(11))
    assert np.all(t.w_left == 1.0) and np.all(t.w_right == 1.0)


def test_resample_circle_stays_on_circle():
    t = resample_centerline(ring_track(5.0, 0.5, n=400), 0.5)
    r = np.hypot(*t.centerline.T)
    assert np.max(np.abs(r - 5.0)) < 1e-3
    seg = np.hypot(*np.diff(np.vstack([t.centerline, t.centerline[:1]]), axis=0).T)
    assert np.ptp(seg) < 1e-3


def test_resample_rejects_bad_spacing():
    with pytest.raises(ValueError):
        resample_centerline(straight_track(10.0, 1.0), 0.0)


def test_track_validation():
    with pytest.raises(ValueError):
        Track(np.zeros((5, 2)), 1, 1)
    pts = np.column_stack([np.arange(10.0), np.zeros(10)])
    pts[3] = pts[2]
    with pytest.raises(ValueError):
        Track(pts, 1, 1)


def test_three_point_curvature_exact_on_circle():
    th = np.linspace(0, 2 * np.pi, 37)[:-1]
    pts = np.column_stack([4 * np.cos(th), 4 * np.sin(th)])
    assert np.allclose(three_point_curvature(pts, closed=True), 0.25)
    assert np.allclose(three_point_curvature(pts[::-1], closed=True), -0.25)


def test_straight_is_fixed_point():
    t = resample_centerline(straight_track(20.0, 1.0), 0.1)
    rl = min_curvature_raceline(t, iterations=10)
    assert np.allclose(rl.waypoints, t.centerline)
    assert curvature_cost(rl.waypoints, False) == 0.0


def test_ring_moves_outward():
    t = resample_centerline(ring_track(5.0, 0.5, n=400), 0.1)
    hist = []
    rl = min_curvature_raceline(t, iterations=30, margin=0.2, history=hist)
    r = np.hypot(*rl.waypoints.T)
    assert r.mean() > 5.0
    assert np.max(np.abs(rl.curvature)) < 0.2
    assert np.all(np.diff(hist) <= 0)
    assert hist[-1] < hist[0]
    assert np.all(r <= 5.0 + 0.5 - 0.2 + 1e-9) and np.all(r >= 5.0 - 0.5 + 0.2 - 1e-9)


def test_corner_reduces_objective_within_bounds():
    t = resample_centerline(corner_track(), 0.2)
    hist = []
    rl = min_curvature_raceline(t, iterations=40, margin=0.3, history=hist)
    assert hist[-1] < hist[0]
    assert np.all(np.diff(hist) <= 0)
    assert curvature_cost(rl.waypoints, False) < curvature_cost(t.centerline, False)
    # feasibility: every point within its station's corridor
    normals_offsets = []
    for p, c, wl, wr in zip(rl.waypoints, t.centerline, t.w_left, t.w_right):
        normals_offsets.append(np.linalg.norm(p - c))
        assert np.linalg.norm(p - c) <= max(wl, wr) - 0.3 + 1e-9
    assert max(normals_offsets) > 0.1


def test_infeasible_margin():
    t = resample_centerline(straight_track(10.0, 0.2), 0.1)
    with pytest.raises(ValueError):
        min_curvature_raceline(t, margin=0.3)


def test_project_on_waypoint():
    rl = build_raceline(resample_centerline(corner_track(), 0.2).centerline)
    for k in (0, 5, 40, len(rl) - 1):
        s, lat, idx = project_to_raceline(rl, rl.waypoints[k])
        assert s == pytest.approx(rl.s[k], abs=1e-12)
        assert lat == pytest.approx(0.0, abs=1e-12)
        assert idx == k


def test_project_straight_line():
    rl = build_raceline(resample_centerline(straight_track(10.0, 1.0), 0.1).centerline)
    s, lat, _ = project_to_raceline(rl, (3.2, 0.5))
    assert s == pytest.approx(3.2, abs=1e-12)
    assert lat == pytest.approx(0.5, abs=1e-12)
    _, lat, _ = project_to_raceline(rl, (3.2, -0.5))
    assert lat == pytest.approx(-0.5, abs=1e-12)


def brute_project(rl, p):
    n = len(rl)
    nseg = n if rl.closed else n - 1
    best = None
    for k in range(nseg):
        a = rl.waypoints[k]
        b = rl.waypoints[(k + 1) % n]
        ab = b - a
        t = min(max(((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / (ab @ ab), 0.0), 1.0)
        q = a + t * ab
        d = math.dist(p, q)
        if best is None or d < best[0]:
            side = ab[0] * (p[1] - q[1]) - ab[1] * (p[0] - q[0])
            best = (d, rl.s[k] + t * math.sqrt(ab @ ab), math.copysign(d, side) if d else 0.0)
    return best


@pytest.mark.parametrize("closed", [False, True])
def test_project_matches_brute_force(closed):
    rng = np.random.default_rng(1)
    if closed:
        rl = build_raceline(resample_centerline(ring_track(5.0, 1.0), 0.3).centerline, True)
        th = rng.uniform(0, 2 * np.pi, 200)
        r = 5 + rng.uniform(-0.8, 0.8, 200)
        pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    else:
        rl = build_raceline(resample_centerline(corner_track(), 0.3).centerline)
        pts = rl.waypoints[rng.integers(0, len(rl), 200)] + rng.normal(0, 0.5, (200, 2))
    for p in pts:
        s, lat, _ = project_to_raceline(rl, p)
        _, s_ref, lat_ref = brute_project(rl, p)
        if closed:
            s_ref %= rl.length
        assert s == pytest.approx(s_ref, abs=1e-9)
        assert lat == pytest.approx(lat_ref, abs=1e-9)


def test_future_waypoints_straight():
    rl = build_raceline(resample_centerline(straight_track(20.0, 1.0), 0.1).centerline)
    pts, exhausted = future_waypoints(rl, 0.0, n=10, spacing=1.0)
    assert np.allclose(pts[:, 0], np.arange(1, 11))
    assert not exhausted
    pts, exhausted = future_waypoints(rl, 15.0, n=10, spacing=1.0)
    assert exhausted and pts[-1, 0] == pytest.approx(20.0)


def test_future_waypoints_wrap_continuity():
    rl = build_raceline(resample_centerline(ring_track(5.0, 1.0, n=400), 0.1).centerline, True)
    pts, _ = future_waypoints(rl, rl.length - 0.25, n=10, spacing=0.1)
    gaps = np.hypot(*np.diff(pts, axis=0).T)
    # chords on a polygonal loop: uniform arc spacing -> near-uniform chords
    assert np.ptp(gaps) < 1e-6 + 1e-3


def test_future_waypoints_wrap_arc_spacing_exact():
    square = np.array([[0, 0], [1, 0], [2, 0], [2, 1], [2, 2], [1, 2], [0, 2], [0, 1]], float)
    rl = build_raceline(square, closed=True)
    pts, _ = future_waypoints(rl, rl.length - 0.35, n=10, spacing=0.1)
    gaps = np.abs(np.diff(pts, axis=0)).sum(axis=1)
    assert np.allclose(gaps, 0.1, atol=1e-6)


def test_future_waypoints_vs_dense_oracle():
    rl = build_raceline(resample_centerline(corner_track(), 0.1).centerline)
    # walk each segment at 1 mm and keep (arc length, point) samples
    samples, arc = [], []
    for k in range(len(rl) - 1):
        a, b = rl.waypoints[k], rl.waypoints[k + 1]
        seg = np.linalg.norm(b - a)
        m = max(int(seg / 0.001), 1)
        for i in range(m):
            samples.append(a + (b - a) * i / m)
            arc.append(rl.s[k] + seg * i / m)
    samples, arc = np.array(samples), np.array(arc)
    s0 = 7.3456
    pts, _ = future_waypoints(rl, s0, n=10, spacing=0.25)
    for j, p in enumerate(pts, start=1):
        i = int(np.argmin(np.abs(arc - (s0 + 0.25 * j))))
        assert np.linalg.norm(samples[i] - p) < 2e-3


def test_progress_delta():
    rl = build_raceline(resample_centerline(ring_track(100 / (2 * np.pi), 1.0, n=2000),
                                            0.05).centerline, closed=True)
    L = rl.length
    assert progress_delta(rl, 5.0, 5.0) == 0.0
    assert progress_delta(rl, L - 1, 1.0) == pytest.approx(2.0)
    assert progress_delta(rl, 1.0, L - 1) == pytest.approx(-2.0)
    open_rl = build_raceline(resample_centerline(straight_track(10, 1), 0.1).centerline)
    assert progress_delta(open_rl, 1.0, 9.0) == pytest.approx(8.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 199))
def test_projection_idempotent_on_waypoints(k):
    rl = build_raceline(resample_centerline(ring_track(5.0, 1.0), 0.16).centerline, True)
    k = k % len(rl)
    _, lat, _ = project_to_raceline(rl, rl.waypoints[k])
    assert abs(lat) < 1e-12


def test_csv_roundtrip(tmp_path):
    t = resample_centerline(ring_track(5.0, 0.6), 0.1)
    rl = min_curvature_raceline(t, iterations=5, margin=0.2)
    save_raceline_csv(rl, tmp_path / "rl.csv")
    back = load_raceline_csv(tmp_path / "rl.csv")
    assert back.closed
    assert np.allclose(back.waypoints, rl.waypoints, atol=1e-8)
    save_track_csv(t, tmp_path / "t.csv")
    tt = load_track_csv(tmp_path / "t.csv")
    assert tt.closed and np.allclose(tt.centerline, t.centerline, atol=1e-8)
    assert load_raceline_csv(tmp_path / "rl.csv").s[0] == 0.0
    open_t = resample_centerline(straight_track(10, 1), 0.1)
    save_track_csv(open_t, tmp_path / "o.csv")
    assert not load_track_csv(tmp_path / "o.csv").closed
