"""Evaluation episodes with ground-truth or fused opponent observations."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..fusion import UkfParams
from ..raceline import Raceline
from ..rl.env import SELF_PLAY, EnvConfig, OvertakeEnv
from ..rl.network import PolicyNet
from ..rl.observation import build_observation
from ..rl.ppo import sample_action
from ..sim import OccupancyGrid, VehicleParams
from .pipeline import SensorChain, estimate_to_state, every_n

SUCCESS_HOLD = 2.0
LEAD_WAYPOINTS = 3

TRAJ_COLUMNS = ("t", "agent_x", "agent_y", "agent_yaw", "agent_v", "opp_x", "opp_y", "opp_yaw",
                "opp_v", "lead", "est_x", "est_y")
SUMMARY_COLUMNS = ("episode", "success", "success_time", "collision", "collision_time",
                   "final_lead", "progress", "mean_speed", "rmse_x", "rmse_y", "trajectory")


@dataclass
class EvalReport:
    """One evaluation episode."""
    episode: int
    success: bool
    success_time: float
    collision: bool
    collision_time: float
    final_lead: float
    progress: float
    mean_speed: float
    rmse_x: float
    rmse_y: float
    trajectory: str

    def __post_init__(self):
        if self.success and self.collision and self.collision_time < self.success_time:
            raise ValueError("success recorded after a collision")


class OvertakeTracker:
    """Lead above ``LEAD_WAYPOINTS`` waypoints held for ``SUCCESS_HOLD`` seconds."""

    def __init__(self, rl: Raceline):
        self.threshold = LEAD_WAYPOINTS * rl.spacing
        self.since = None
        self.success_time = math.nan

    @property
    def success(self) -> bool:
        return not math.isnan(self.success_time)

    def update(self, t: float, lead: float) -> None:
        if self.success:
            return
        if lead > self.threshold:
            if self.since is None:
                self.since = t
            if t - self.since >= SUCCESS_HOLD - 1e-9:
                self.success_time = t
        else:
            self.since = None


def _fused_observation(env: OvertakeEnv, chain: SensorChain, scan, step: int, lidar_every: int,
                       camera_every: int):
    """Feed due sensors into the chain and build agent 0's observation from its estimate."""
    ego, opp = env.states[0], env.states[1]
    ms = []
    if lidar_every and step % lidar_every == 0 and scan is not None:
        m = chain.lidar_measurement(scan)
        if m is not None:
            ms.append(m)
    if camera_every and step % camera_every == 0:
        ms.extend(chain.camera_measurements(ego, opp, env.t))
    chain.feed(ms)
    est = chain.estimate(env.t)
    if est is None:
        obs = build_observation(ego, None, scan, env.rl, env.cfg.obs, env.pos[0].s)
    else:
        opp_est, s_est = estimate_to_state(est, env.rl)
        obs = env.observe(0, opponent_override=opp_est, opponent_s=s_est, scan=scan)
    return obs, est


def run_episode(env: OvertakeEnv, net: PolicyNet, spawns, rng: np.random.Generator,
                deterministic: bool = True, use_fusion: bool = False,
                chain: SensorChain | None = None, opponent_net: PolicyNet | None = None,
                lidar_rate: float = 10.0, camera_rate: float = 1.0):
    """One episode; returns (OvertakeTracker, collision time or nan, trajectory rows)."""
    env.reset(spawns=spawns, observe=False)
    ot = OvertakeTracker(env.rl)
    lidar_every = every_n(lidar_rate, env.cfg.control_period)
    camera_every = every_n(camera_rate, env.cfg.control_period)
    rows, step, coll_t = [], 0, math.nan
    s0 = env.pos[0].s
    while True:
        scan = env.scan(0)
        if use_fusion:
            obs, est = _fused_observation(env, chain, scan, step, lidar_every, camera_every)
        else:
            obs, est = env.observe(0, scan=scan), None
        a0 = sample_action(net, obs, rng, deterministic)[0]
        actions = {0: a0}
        if opponent_net is not None:
            actions[1] = sample_action(opponent_net, env.observe(1), rng, True)[0]
        a, b = env.states
        rows.append((env.t, a.x, a.y, a.yaw, a.v, b.x, b.y, b.yaw, b.v, env.lead(0),
                     math.nan if est is None else float(est.mean[0]),
                     math.nan if est is None else float(est.mean[1])))
        out = env.step(actions, observe=False)
        step += 1
        if out.collisions[0]:
            coll_t = env.t
            break
        ot.update(env.t, env.lead(0))
        if out.done:
            break
    a, b = env.states
    rows.append((env.t, a.x, a.y, a.yaw, a.v, b.x, b.y, b.yaw, b.v, env.lead(0), math.nan,
                 math.nan))
    return ot, coll_t, rows, env.pos[0].s - s0


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(v)
    if isinstance(v, str):
        return v
    return "nan" if math.isnan(v) else f"{v:.9f}"


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_trajectory(path) -> np.ndarray:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != TRAJ_COLUMNS:
            raise ValueError(f"{path}: expected columns {TRAJ_COLUMNS}, got {header}")
        return np.array([[float(v) for v in r] for r in reader], dtype=float).reshape(-1, len(header))


def read_summary(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: unexpected summary header")
        out = []
        for r in reader:
            d = {k: float(v) for k, v in r.items() if k != "trajectory"}
            d["episode"] = int(d["episode"])
            d["success"], d["collision"] = bool(d["success"]), bool(d["collision"])
            d["trajectory"] = r["trajectory"]
            out.append(d)
        return out


def evaluate(grid: OccupancyGrid, rl: Raceline, net: PolicyNet, env_cfg: EnvConfig,
             n_episodes: int, seed: int, out_dir=None, use_fusion: bool = False,
             deterministic: bool = True, spawns=None, opponent_net: PolicyNet | None = None,
             ukf: UkfParams = UkfParams(), lidar_rate: float = 10.0, camera_rate: float = 1.0,
             noise: float = 1.0, params: VehicleParams = VehicleParams()):
    """Run ``n_episodes``; returns (reports, env). Writes CSVs when ``out_dir`` is set.

    Episode spawns come from ``seed`` alone, so two policies evaluated with the
    same seed face the same starts.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if opponent_net is not None and env_cfg.opponent != SELF_PLAY:
        env_cfg = EnvConfig(**{**{f: getattr(env_cfg, f) for f in env_cfg.__dataclass_fields__},
                               "opponent": SELF_PLAY})
    env = OvertakeEnv(grid, rl, env_cfg, params)
    spawn_rng = np.random.default_rng([seed, 0])
    act_rng = np.random.default_rng([seed, 1])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "trajectories").mkdir(parents=True, exist_ok=True)
    reports = []
    for ep in range(n_episodes):
        sp = spawns if spawns is not None else env.random_spawns(spawn_rng)
        chain = None
        if use_fusion:
            chain = SensorChain(grid, params, ukf, noise=noise,
                                rng=np.random.default_rng([seed, 2, ep]))
        ot, coll_t, rows, progress = run_episode(env, net, sp, act_rng, deterministic,
                                                 use_fusion, chain, opponent_net, lidar_rate,
                                                 camera_rate)
        arr = np.array(rows, dtype=float)
        rmse_x = rmse_y = math.nan
        ok = ~np.isnan(arr[:, 10])
        if use_fusion and ok.any():
            rmse_x = float(np.sqrt(np.mean((arr[ok, 10] - arr[ok, 5]) ** 2)))
            rmse_y = float(np.sqrt(np.mean((arr[ok, 11] - arr[ok, 6]) ** 2)))
        traj = f"trajectories/episode_{ep:03d}.csv"
        if out is not None:
            write_rows(out / traj, TRAJ_COLUMNS, rows)
        reports.append(EvalReport(ep, ot.success, ot.success_time, not math.isnan(coll_t),
                                  coll_t, float(arr[-1, 9]), float(progress),
                                  float(np.mean(arr[:, 4])), rmse_x, rmse_y, traj))
    if out is not None:
        write_rows(out / "eval_summary.csv", SUMMARY_COLUMNS,
                   [tuple(asdict(r).values()) for r in reports])
    return reports, env


def success_rate(reports) -> float:
    return sum(r.success for r in reports) / len(reports)
