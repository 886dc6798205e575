import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from overtake.sim import (LidarConfig, OccupancyGrid, RaceSim, SimConfig, VehicleParams,
                          VehicleState, check_collisions, clearance_map, load_map, load_spawns,
                          make_corridor, rasterize_vehicle, raycast_lidar, rects_overlap, save_map,
                          save_spawns, step_bicycle, wrap_angle)

FREE = VehicleParams(steer_rate_limit=1e9, accel_limit=1e9)


def fit_circle(xy):
    # algebraic (Kasa) least-squares circle fit
    x, y = xy[:, 0], xy[:, 1]
    A = np.column_stack([x, y, np.ones_like(x)])
    b = x ** 2 + y ** 2
    c = np.linalg.lstsq(A, b, rcond=None)[0]
    cx, cy = c[0] / 2, c[1] / 2
    return cx, cy, math.sqrt(c[2] + cx ** 2 + cy ** 2)


def drive_circle(v, steer, params=FREE, dt=1e-3):
    omega = v * math.tan(steer) / params.wheelbase
    n = int(math.ceil(2 * math.pi / abs(omega) / dt))
    s = VehicleState(v=v, steering=steer)
    pts = [(s.x, s.y)]
    for _ in range(n):
        s = step_bicycle(s, (steer, v), params, dt)
        pts.append((s.x, s.y))
    return np.array(pts)


def empty_grid(n=200, res=0.05):
    return OccupancyGrid(res, (-n * res / 2, -n * res / 2), np.zeros((n, n), dtype=bool))


# --- bicycle -----------------------------------------------------------------

def test_zero_velocity_is_fixed_point():
    s = VehicleState(x=1.0, y=2.0, yaw=0.5, v=0.0, steering=0.3)
    out = step_bicycle(s, (0.3, 0.0), FREE, 0.01)
    assert (out.x, out.y, out.yaw) == (1.0, 2.0, 0.5)


def test_straight_line():
    s = VehicleState(v=1.0)
    for _ in range(100):
        s = step_bicycle(s, (0.0, 1.0), FREE, 0.01)
    assert s.x == pytest.approx(1.0, abs=1e-12)
    assert s.y == 0.0


def test_turning_circle_radius():
    xy = drive_circle(1.0, 0.2)
    _, _, r = fit_circle(xy)
    expected = 0.33 / math.tan(0.2)
    assert expected == pytest.approx(1.628, abs=1e-3)
    assert abs(r - expected) / expected < 0.01


def test_actuator_bounds_and_slew():
    p = VehicleParams()
    s = VehicleState()
    s = step_bicycle(s, (5.0, 10.0), p, 0.01)
    assert s.steering == pytest.approx(p.steer_rate_limit * 0.01)
    assert s.v == pytest.approx(p.accel_limit * 0.01)
    for _ in range(200):
        s = step_bicycle(s, (5.0, 10.0), p, 0.01)
    assert s.steering == p.max_steer
    assert s.v == p.max_speed
    assert -math.pi < s.yaw <= math.pi


def test_constant_speed_is_exact():
    s = VehicleState(v=1.7, steering=0.1)
    for _ in range(500):
        s = step_bicycle(s, (0.1, 1.7), VehicleParams(), 0.01)
    assert s.v == 1.7


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        step_bicycle(VehicleState(x=float("nan")), (0, 0), FREE, 0.01)
    with pytest.raises(ValueError):
        step_bicycle(VehicleState(), (float("inf"), 0), FREE, 0.01)


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


# --- rasterization -----------------------------------------------------------

def test_rasterize_matches_point_in_rect_oracle():
    grid = empty_grid(100)
    p = VehicleParams()
    car = VehicleState(x=0.0, y=0.0, yaw=0.0)
    out = rasterize_vehicle(grid, car, p)
    X, Y = grid.cell_centers()
    oracle = (np.abs(X) <= p.length / 2) & (np.abs(Y) <= p.width / 2)
    diff = out.cells ^ oracle
    # any disagreement must sit on the rectangle boundary
    if diff.any():
        rows, cols = np.nonzero(diff)
        d = np.minimum(np.abs(np.abs(X[rows, cols]) - p.length / 2),
                       np.abs(np.abs(Y[rows, cols]) - p.width / 2))
        assert (d <= grid.resolution).all()
    assert out.cells.sum() == 12 * 6


def test_rasterize_absent_car_is_noop():
    grid = empty_grid(40)
    out = rasterize_vehicle(grid, None, VehicleParams())
    assert np.array_equal(out.cells, grid.cells)


def test_rasterize_rotation_symmetry():
    grid = empty_grid(100)
    p = VehicleParams()
    a = rasterize_vehicle(grid, VehicleState(yaw=0.0), p).cells
    b = rasterize_vehicle(grid, VehicleState(yaw=math.pi / 2), p).cells
    assert np.array_equal(np.rot90(a), b)


def test_rasterize_outside_grid_raises():
    with pytest.raises(ValueError):
        rasterize_vehicle(empty_grid(20), VehicleState(x=0.45), VehicleParams())


# --- lidar -------------------------------------------------------------------

def wall_grid(distance=2.0, res=0.05):
    grid = empty_grid(400, res)
    X, _ = grid.cell_centers()
    # wall face exactly at x = distance
    grid.cells[:] = X >= distance
    return grid


def test_empty_grid_all_max_range():
    cfg = LidarConfig(max_range=4.0)
    scan = raycast_lidar(empty_grid(400), (0.0, 0.0, 0.3), cfg)
    assert scan.n_beams == 1080
    assert np.all(scan.ranges == 4.0)


def test_scan_geometry():
    scan = raycast_lidar(empty_grid(40), (0.0, 0.0, 0.0))
    assert len(scan.angles) == 1080
    assert scan.angles[0] == pytest.approx(-math.radians(135))
    assert scan.angles[-1] == pytest.approx(math.radians(135))
    assert np.allclose(np.diff(scan.angles), math.radians(270) / 1079)


def test_wall_center_beam():
    scan = raycast_lidar(wall_grid(), (0.0, 0.0, 0.0), LidarConfig(max_range=10.0))
    center = scan.ranges[539:541]
    assert np.all(np.abs(center - 2.0) <= 0.05)


def test_oblique_incidence():
    scan = raycast_lidar(wall_grid(), (0.0, 0.0, 0.0), LidarConfig(max_range=10.0))
    sel = np.abs(scan.angles) < math.radians(60)
    expected = 2.0 / np.cos(scan.angles[sel])
    assert np.max(np.abs(scan.ranges[sel] - expected)) <= 0.05 / np.cos(math.radians(60))


def test_sensor_in_wall_raises():
    with pytest.raises(ValueError):
        raycast_lidar(wall_grid(), (2.5, 0.0, 0.0))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 99), st.integers(0, 99)), min_size=1, max_size=40),
       st.floats(-math.pi, math.pi))
def test_raycast_monotone_in_obstacles(extra, yaw):
    base = empty_grid(100)
    base.cells[0, :] = True
    more = base.copy()
    for r, c in extra:
        if (r, c) not in ((49, 49), (49, 50), (50, 49), (50, 50)):
            more.cells[r, c] = True
    pose = (0.01, 0.01, yaw)
    a = raycast_lidar(base, pose, LidarConfig(max_range=6.0)).ranges
    b = raycast_lidar(more, pose, LidarConfig(max_range=6.0)).ranges
    assert np.all(b <= a)


def test_raycast_deterministic():
    g = make_corridor(10.0, 2.0)
    a = raycast_lidar(g, (1.0, 0.2, 0.1)).ranges
    b = raycast_lidar(g, (1.0, 0.2, 0.1)).ranges
    assert np.array_equal(a, b)


# --- collisions --------------------------------------------------------------

def test_cars_apart_no_collision():
    g = make_corridor(20.0, 3.0)
    flags = check_collisions(g, [VehicleState(x=2.0), VehicleState(x=7.0)], VehicleParams())
    assert flags == [False, False]


def test_identical_pose_collides():
    g = make_corridor(20.0, 3.0)
    flags = check_collisions(g, [VehicleState(x=2.0), VehicleState(x=2.0)], VehicleParams())
    assert flags == [True, True]


def unit_square(cx, cy):
    return np.array([[cx - .5, cy - .5], [cx + .5, cy - .5], [cx + .5, cy + .5], [cx - .5, cy + .5]])


def test_separating_axis_hand_cases():
    assert rects_overlap(unit_square(0, 0), unit_square(0.99, 0))
    assert not rects_overlap(unit_square(0, 0), unit_square(1.01, 0))
    # diamond touching a square only through its bounding box
    c = 1.0 + 0.5 * math.sqrt(2) + 0.01
    diamond = np.array([[c - .5 * math.sqrt(2), 0], [c, -.5 * math.sqrt(2)],
                        [c + .5 * math.sqrt(2), 0], [c, .5 * math.sqrt(2)]])
    assert not rects_overlap(unit_square(0.5, 0), diamond)


def test_wall_collision():
    g = make_corridor(20.0, 1.0)
    flags = check_collisions(g, [VehicleState(x=2.0, y=0.4)], VehicleParams())
    assert flags == [True]


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-3, 3), st.floats(-3, 3))
def test_collision_symmetric(dx, dy, ya, yb):
    g = make_corridor(20.0, 6.0)
    a = VehicleState(x=5.0, y=0.0, yaw=ya)
    b = VehicleState(x=5.0 + dx, y=dy, yaw=yb)
    p = VehicleParams()
    assert check_collisions(g, [a, b], p) == check_collisions(g, [b, a], p)[::-1]


# --- env ---------------------------------------------------------------------

def test_single_agent_matches_bicycle():
    g = make_corridor(20.0, 3.0)
    sim = RaceSim(g, SimConfig(n_agents=1))
    s0 = VehicleState(x=2.0, v=1.0)
    sim.reset([s0])
    ref = s0
    for _ in range(50):
        out = sim.step([(0.0, 1.0)])
        ref = step_bicycle(ref, (0.0, 1.0), sim.params, sim.config.dt)
    assert out.states[0] == ref


def test_head_on_collision_ends_episode():
    g = make_corridor(20.0, 3.0)
    sim = RaceSim(g, SimConfig(n_agents=2, lidar_rate=0))
    sim.reset([VehicleState(x=5.0, v=1.0), VehicleState(x=6.0, yaw=math.pi, v=1.0)])
    while not sim.done:
        out = sim.step([(0.0, 1.0), (0.0, 1.0)])
    assert sim.t <= 0.6
    assert out.collisions == [True, True]
    with pytest.raises(RuntimeError):
        sim.step([(0.0, 1.0), (0.0, 1.0)])


def run_twice():
    g = make_corridor(15.0, 2.5)
    cfg = SimConfig(seed=3, lidar=LidarConfig(range_noise=0.01))
    outs = []
    for _ in range(2):
        sim = RaceSim(g, cfg)
        sim.reset([VehicleState(x=1.0), VehicleState(x=3.0, y=0.5)])
        traj = []
        for k in range(60):
            r = sim.step([(0.1 * math.sin(k / 7), 2.0), (-0.05, 1.0)])
            traj.append([s.as_array() for s in r.states])
            traj.extend(sc.ranges for sc in r.scans if sc is not None)
        outs.append(traj)
    return outs


def test_determinism_bit_identical():
    a, b = run_twice()
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert np.array_equal(np.asarray(x), np.asarray(y))


def test_opponent_visible_in_scan():
    g = make_corridor(15.0, 2.5)
    sim = RaceSim(g, SimConfig(lidar=LidarConfig(max_range=10.0)))
    out = sim.reset([VehicleState(x=2.0), VehicleState(x=4.0)])
    center = out.scans[0].ranges[540]
    assert abs(center - (2.0 - 0.29)) <= 0.05 + 1e-9


def test_map_roundtrip(tmp_path):
    g = make_corridor(5.0, 1.5)
    save_map(g, tmp_path / "m.json")
    save_map(g, tmp_path / "p.json", pgm=True)
    for name in ("m.json", "p.json"):
        h = load_map(tmp_path / name)
        assert np.array_equal(h.cells, g.cells)
        assert h.origin == g.origin and h.resolution == g.resolution
    save_spawns([VehicleState(x=1, y=2, yaw=0.5, v=1.0)], tmp_path / "s.json")
    (s,) = load_spawns(tmp_path / "s.json")
    assert (s.x, s.y, s.yaw, s.v) == (1, 2, 0.5, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-1.0, 6.0), st.floats(-2.0, 2.0), st.floats(-3.2, 3.2)),
                min_size=2, max_size=2))
def test_clearance_prefilter_is_exact(poses):
    g = make_corridor(5.0, 2.5)
    g.cells[30:34, 40:45] = True
    states = [VehicleState(x=x, y=y, yaw=yaw) for x, y, yaw in poses]
    p = VehicleParams()
    assert check_collisions(g, states, p) == check_collisions(g, states, p,
                                                              clearance=clearance_map(g))
