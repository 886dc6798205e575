"""Subcommand implementations. Each takes the resolved config dict and an output dir."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..fusion import (CHANNELS, HARDWARE_RMSE, UkfParams, compute_rmse, read_ground_truth,
                      read_measurement_log, run_filter, write_estimates, write_ground_truth,
                      write_measurement_log, write_rmse_summary)
from ..raceline import (curvature_cost, load_track_csv, min_curvature_raceline,
                        resample_centerline, save_raceline_csv, straight_track)
from ..rl.env import EnvConfig, OvertakeEnv
from ..rl.network import init_policy
from ..rl.train import (TrainConfig, load_checkpoint, policy_signature, read_metrics, train,
                        train_config_from_dict)
from ..sim import RaceSim, SimConfig, VehicleParams
from . import plots
from .config import ConfigError
from .controllers import scripted_pursuit_controller
from .evaluate import evaluate, read_trajectory, success_rate
from .pipeline import SensorChain
from .scenario import POLICY, Scenario, build_world
from .synthlog import direct_log

log = logging.getLogger(__name__)

# hardware reference values printed next to replay results, for context only
REFERENCE_UKF_RMSE = HARDWARE_RMSE["ukf"]


class IncompatibleCheckpoint(RuntimeError):
    pass


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def scenario_from(cfg) -> Scenario:
    try:
        return Scenario.from_dict(cfg["scenario"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc


def train_config_from(cfg) -> TrainConfig:
    d = dict(cfg["train"])
    d["seed"] = int(cfg["seed"])
    try:
        return train_config_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc


def ukf_from(cfg) -> UkfParams:
    try:
        return UkfParams.from_dict(cfg["ukf"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"ukf: {exc}") from exc


# ---------------------------------------------------------------------------
# gen-raceline


def cmd_gen_raceline(cfg, out: Path, track_path=None, plot: bool = True) -> dict:
    """Optimize a raceline for a centerline CSV (or the configured corridor)."""
    rc = cfg["raceline"]
    if track_path is not None:
        p = Path(track_path)
        if not p.is_file():
            raise FileNotFoundError(f"track file not found: {p}")
        track = load_track_csv(p)
    else:
        sc = scenario_from(cfg)
        track = straight_track(sc.corridor_length, sc.corridor_width / 2)
    track = resample_centerline(track, float(rc["spacing"]))
    before = curvature_cost(track.centerline, track.closed)
    history = []
    rl = min_curvature_raceline(track, int(rc["iterations"]), float(rc["step_size"]),
                                float(rc["margin"]), history)
    after = curvature_cost(rl.waypoints, rl.closed)
    out.mkdir(parents=True, exist_ok=True)
    save_raceline_csv(rl, out / "raceline.csv")
    report = {"sum_kappa2_before": before, "sum_kappa2_after": after,
              "iterations": len(history) - 1, "points": len(rl), "closed": rl.closed,
              "length": rl.length}
    _write_json(report, out / "raceline_report.json")
    if plot:
        plots.plot_raceline(track.centerline, rl.waypoints, history, out / "raceline.png")
    print(f"sum kappa^2 before: {before:.9g}")
    print(f"sum kappa^2 after:  {after:.9g}")
    print(f"wrote {out / 'raceline.csv'} ({len(rl)} points, {rl.length:.3f} m)")
    return report


# ---------------------------------------------------------------------------
# train


def cmd_train(cfg, out: Path, resume: bool = False, plot: bool = True) -> dict:
    sc = scenario_from(cfg)
    tcfg = train_config_from(cfg)
    grid, rl, _ = build_world(sc)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(cfg, out / "config.json")
    res = train(tcfg, grid, rl, out, resume=resume)
    metrics = read_metrics(out / "metrics.csv")
    if plot and metrics:
        plots.plot_training(metrics, out / "training.png")
    r = [m["mean_reward"] for m in metrics]
    k = min(10, len(r))
    summary = {"updates": len(metrics), "checkpoint": res.checkpoint.name if res.checkpoint
               else None, "first_mean_reward": float(np.mean(r[:k])) if r else None,
               "last_mean_reward": float(np.mean(r[-k:])) if r else None}
    print(f"trained {len(metrics)} updates; mean reward first {k}: "
          f"{summary['first_mean_reward']:.6f}, last {k}: {summary['last_mean_reward']:.6f}")
    print(f"checkpoint: {res.checkpoint}")
    return summary


# ---------------------------------------------------------------------------
# eval


def load_policy(path, tcfg: TrainConfig):
    net, meta = load_checkpoint(path)
    want = policy_signature(tcfg.hidden, tcfg.env.obs)
    if meta.get("policy_signature") != want:
        raise IncompatibleCheckpoint(
            f"{path}: policy signature {meta.get('policy_signature')} does not match the "
            f"configured network/observation ({want})")
    return net


def eval_env_config(tcfg: TrainConfig, sc: Scenario) -> EnvConfig:
    d = {f: getattr(tcfg.env, f) for f in tcfg.env.__dataclass_fields__}
    d.update(episode_time=sc.duration, opponent_speed_frac=sc.opponent_speed_frac)
    return EnvConfig(**d)


def cmd_eval(cfg, out: Path, checkpoint=None, episodes=None, use_fusion=None,
             plot: bool = True) -> dict:
    sc = scenario_from(cfg)
    tcfg = train_config_from(cfg)
    ec = cfg["eval"]
    n = int(episodes if episodes is not None else ec["episodes"])
    fusion = bool(ec["use_fusion"] if use_fusion is None else use_fusion)
    seed = int(cfg["seed"])
    grid, rl, spawns = build_world(sc)
    if checkpoint is not None:
        if not Path(checkpoint).is_file():
            raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
        net = load_policy(checkpoint, tcfg)
        label = Path(checkpoint).name
    else:
        net = init_policy(np.random.default_rng(seed), hidden=tcfg.hidden,
                          log_std=tcfg.log_std_init)
        label = "untrained"
    opp = load_policy(sc.opponent_checkpoint, tcfg) if sc.opponent == POLICY else None
    out.mkdir(parents=True, exist_ok=True)
    reports, env = evaluate(grid, rl, net, eval_env_config(tcfg, sc), n, seed, out,
                            use_fusion=fusion, deterministic=bool(ec["deterministic"]),
                            spawns=spawns, opponent_net=opp, ukf=ukf_from(cfg),
                            lidar_rate=sc.lidar_rate, camera_rate=sc.camera_rate,
                            noise=sc.noise)
    rate = success_rate(reports)
    summary = {
        "policy": label,
        "episodes": n,
        "use_fusion": fusion,
        "success_rate": rate,
        "successes": sum(r.success for r in reports),
        "collisions": sum(r.collision for r in reports),
        "mean_progress": float(np.mean([r.progress for r in reports])),
        "opponent_truth_reads": env.n_truth_reads[0],
    }
    if fusion:
        summary["rmse_x"] = float(np.nanmean([r.rmse_x for r in reports]))
        summary["rmse_y"] = float(np.nanmean([r.rmse_y for r in reports]))
    _write_json(summary, out / "eval_report.json")
    if plot:
        trajs = [read_trajectory(out / r.trajectory) for r in reports]
        half = sc.corridor_width / 2 if sc.map is None else None
        plots.plot_trajectories(trajs, half, out / "trajectories.png",
                                f"{label}: {summary['successes']}/{n} overtakes")
    print(f"policy {label}: {summary['successes']}/{n} overtakes "
          f"(success rate {rate:.2f}), {summary['collisions']} collisions")
    if fusion:
        print(f"fused opponent RMSE x {summary['rmse_x']:.4f} m, y {summary['rmse_y']:.4f} m; "
              f"opponent ground-truth reads: {summary['opponent_truth_reads']}")
    return summary


# ---------------------------------------------------------------------------
# fuse-replay


def cmd_fuse_replay(cfg, out: Path, log_path, truth_path, warmup=None, plot: bool = True) -> dict:
    for p in (log_path, truth_path):
        if not Path(p).is_file():
            raise FileNotFoundError(f"input not found: {p}")
    params = ukf_from(cfg)
    warmup = float(cfg["replay"]["warmup"] if warmup is None else warmup)
    ms = read_measurement_log(log_path)
    gt_t, gt_xy, _ = read_ground_truth(truth_path)

    def score(channels):
        est, tracker = run_filter(ms, params, channels, t_end=float(gt_t[-1]))
        if not est:
            return None, est, tracker
        rx, ry = compute_rmse([e.t for e in est], [e.mean[:2] for e in est], gt_t, gt_xy,
                              warmup)
        return {"rmse_x": rx, "rmse_y": ry, "estimates": len(est),
                "updates": tracker.n_updates, "outliers": tracker.n_outliers,
                "stale": tracker.n_stale}, est, tracker

    fused, est, _ = score(CHANNELS)
    if fused is None:
        raise RuntimeError("no measurements to fuse")
    per_channel = {ch: score((ch,))[0] for ch in CHANNELS}
    without = {ch: score(tuple(c for c in CHANNELS if c != ch))[0] for ch in CHANNELS}
    out.mkdir(parents=True, exist_ok=True)
    write_estimates(est, out / "estimates.csv")
    summary = {"rmse_x": fused["rmse_x"], "rmse_y": fused["rmse_y"], "fused": fused,
               "per_channel": per_channel, "without_channel": without, "warmup": warmup,
               "reference_hardware": {k: list(v) for k, v in HARDWARE_RMSE.items()}}
    write_rmse_summary(summary, out / "rmse.json")
    if plot:
        arr = np.array([[e.t, *e.mean, np.sqrt(e.cov[0, 0]), np.sqrt(e.cov[1, 1])] for e in est])
        plots.plot_replay(gt_t, gt_xy, arr, out / "replay.png")
    print(f"{'channels':<16}{'rmse_x [m]':>12}{'rmse_y [m]':>12}")
    print(f"{'fused':<16}{fused['rmse_x']:>12.4f}{fused['rmse_y']:>12.4f}")
    for ch, r in per_channel.items():
        if r is not None:
            print(f"{ch + ' only':<16}{r['rmse_x']:>12.4f}{r['rmse_y']:>12.4f}")
    for ch, r in without.items():
        if r is not None:
            print(f"{'no ' + ch:<16}{r['rmse_x']:>12.4f}{r['rmse_y']:>12.4f}")
    print(f"hardware reference (UKF): rmse_x {REFERENCE_UKF_RMSE[0]}, "
          f"rmse_y {REFERENCE_UKF_RMSE[1]} m")
    return summary


# ---------------------------------------------------------------------------
# gen-log


def perception_log(cfg, seed: int, duration: float, lidar_rate: float, camera_rate: float,
                   noise: float):
    """Chase scenario in the simulator; measurements come out of the perception chain.

    Both cars follow the raceline at the opponent speed, so the gap stays
    roughly constant and the opponent stays in the ego's field of view.
    """
    sc = scenario_from(cfg)
    grid, rl, spawns = build_world(sc)
    tcfg = train_config_from(cfg)
    params = VehicleParams()
    if spawns is None:
        env = OvertakeEnv(grid, rl, tcfg.env, params)
        spawns = env.random_spawns(np.random.default_rng(seed))
    dt = 0.01
    sim = RaceSim(grid, SimConfig(dt=dt, n_agents=2, lidar_rate=0.0, camera_rate=0.0,
                                  seed=seed, timeout=duration + 1.0), params)
    sim.reset(spawns)
    chain = SensorChain(grid, params, ukf_from(cfg), noise=noise,
                        rng=np.random.default_rng([seed, 1]))
    speed = sc.opponent_speed_frac * params.max_speed
    every_l = max(int(round(1 / (lidar_rate * dt))), 1) if lidar_rate > 0 else 0
    every_c = max(int(round(1 / (camera_rate * dt))), 1) if camera_rate > 0 else 0
    n_steps = int(round(duration / dt))
    ms, gt = [], []
    for k in range(n_steps + 1):
        t = round(k * dt, 9)
        ego, opp = sim.states
        gt.append((t, opp.x, opp.y, opp.yaw))
        if k == n_steps:
            break
        batch = []
        if every_l and k % every_l == 0:
            scan = sim.scan(0)
            m = chain.lidar_measurement(scan)
            if m is not None:
                batch.append(m)
        if every_c and k % every_c == every_c // 2:
            batch.extend(chain.camera_measurements(ego, opp, t))
        chain.feed(batch)
        ms.extend(batch)
        cmds = [scripted_pursuit_controller(rl, ego, 1.0, speed, params),
                scripted_pursuit_controller(rl, opp, 1.0, speed, params)]
        res = sim.step(cmds)
        if res.done:
            raise RuntimeError(f"perception log scenario ended early at t={sim.t:.2f} s "
                               f"(collisions {res.collisions})")
    gt = np.array(gt)
    return ms, gt[:, 0], gt[:, 1:3], gt[:, 3]


def cmd_gen_log(cfg, out: Path, mode=None) -> dict:
    lc = cfg["log"]
    mode = mode or lc["mode"]
    seed = int(cfg["seed"])
    duration, lr, cr, noise = (float(lc[k]) for k in ("duration", "lidar_rate", "camera_rate",
                                                      "noise"))
    if mode == "direct":
        ms, truth = direct_log(seed, duration, lr, cr, noise, ukf_from(cfg))
        gt_t, gt_xy, gt_yaw = truth.t, truth.xy, truth.yaw
    elif mode == "perception":
        ms, gt_t, gt_xy, gt_yaw = perception_log(cfg, seed, duration, lr, cr, noise)
    else:
        raise ConfigError(f"log mode must be 'direct' or 'perception', got {mode!r}")
    out.mkdir(parents=True, exist_ok=True)
    write_measurement_log(ms, out / "measurements.csv")
    write_ground_truth(gt_t, gt_xy, gt_yaw, out / "ground_truth.csv")
    counts = {ch: sum(1 for m in ms if m.channel == ch) for ch in CHANNELS}
    print(f"wrote {len(ms)} measurements ({', '.join(f'{k} {v}' for k, v in counts.items())}) "
          f"and {len(gt_t)} ground-truth rows to {out}")
    return {"mode": mode, "measurements": len(ms), "per_channel": counts,
            "ground_truth_rows": len(gt_t)}
