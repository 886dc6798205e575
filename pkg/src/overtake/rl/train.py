"""Training loop: rollout -> GAE -> PPO epochs, with checkpoints and metrics."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from ..raceline import Raceline
from ..sim import OccupancyGrid, VehicleParams
from .env import EnvConfig, OvertakeEnv
from .network import PolicyNet, init_policy, load_arrays, save_arrays
from .observation import ObsConfig
from .ppo import PpoConfig, ppo_update
from .reward import COMPONENTS
from .rollout import collect_rollout

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRIC_COLUMNS = ("update", "transitions", "episodes", "collisions", "mean_reward",
                  "mean_episode_return", *(f"r_{c}" for c in COMPONENTS), "loss", "policy_loss",
                  "value_loss", "entropy", "clip_frac", "approx_kl", "grad_norm", "log_std_0",
                  "log_std_1")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    updates: int = 200
    checkpoint_every: int = 10
    hidden: tuple[int, ...] = (256, 256)
    log_std_init: float = -0.5
    seed: int = 0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    env: EnvConfig = field(default_factory=EnvConfig)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, d):
    """Rebuild a (possibly nested) frozen dataclass from a plain dict."""
    kwargs = {}
    hints = {f.name: f for f in fields(cls)}
    for k, v in d.items():
        if k not in hints:
            raise KeyError(f"unknown {cls.__name__} field {k!r}")
        default = hints[k].default_factory() if callable(hints[k].default_factory) else \
            hints[k].default
        if is_dataclass(default) and isinstance(v, dict):
            v = _build(type(default), v)
        elif isinstance(default, tuple) and isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


def train_config_from_dict(d: dict) -> TrainConfig:
    return _build(TrainConfig, d)


def policy_signature(hidden, obs: ObsConfig, act_dim: int = 2) -> str:
    """Hash of everything a checkpoint must agree on to be reused by eval."""
    blob = json.dumps({"hidden": list(hidden), "obs": asdict(obs), "act_dim": act_dim},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def config_hash(cfg: TrainConfig) -> str:
    d = cfg.to_dict()
    d.pop("updates")
    d.pop("checkpoint_every")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, net: PolicyNet, rng: np.random.Generator, next_update: int,
                    cfg: TrainConfig) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "next_update": next_update,
        "rng_state": rng.bit_generator.state,
        "config_hash": config_hash(cfg),
        "policy_signature": policy_signature(cfg.hidden, cfg.env.obs),
        "config": cfg.to_dict(),
    }
    arrays = save_arrays(net)
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_suffix(".tmp.npz")
    _write_npz(tmp, arrays)
    tmp.replace(path)


def _write_npz(path, arrays: dict) -> None:
    """np.load-compatible archive with fixed entry timestamps, so equal content
    gives equal bytes (np.savez stamps the current time)."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]),
                                      allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)),
                        buf.getvalue())


def load_checkpoint(path) -> tuple[PolicyNet, dict]:
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(bytes(arrays.pop("meta")).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    return load_arrays(arrays), meta


def latest_checkpoint(out_dir) -> Path | None:
    p = Path(out_dir) / "checkpoints"
    cands = sorted(p.glob("update_*.npz"))
    return cands[-1] if cands else None


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    net: PolicyNet
    metrics: list[dict]
    checkpoint: Path | None


def _metrics_row(u, rollout, stats, net) -> dict:
    comps = rollout.mean_components()
    row = {
        "update": u,
        "transitions": rollout.n_transitions,
        "episodes": rollout.episodes,
        "collisions": rollout.collisions,
        "mean_reward": rollout.mean_reward(),
        "mean_episode_return": float(np.mean(rollout.episode_returns))
        if rollout.episode_returns else float("nan"),
    }
    row.update({f"r_{c}": float(v) for c, v in zip(COMPONENTS, comps)})
    row.update(stats)
    row["log_std_0"], row["log_std_1"] = (float(v) for v in net.params["log_std"])
    return row


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics header")
        return [{k: (int(v) if k in ("update", "transitions", "episodes", "collisions")
                     else float(v)) for k, v in r.items()} for r in reader]


def train(cfg: TrainConfig, grid: OccupancyGrid, rl: Raceline, out_dir,
          params: VehicleParams = VehicleParams(), resume: bool = False,
          stop_after: int | None = None) -> TrainResult:
    """Run (or resume) training; writes metrics.csv and checkpoints/ under ``out_dir``.

    ``stop_after`` ends the loop early after that many updates in this call,
    which is how an interrupted run is simulated.
    """
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    env = OvertakeEnv(grid, rl, cfg.env, params)
    rng = np.random.default_rng(cfg.seed)
    net = init_policy(rng, hidden=cfg.hidden, log_std=cfg.log_std_init)
    start, rows = 0, []
    ckpt = latest_checkpoint(out) if resume else None
    if ckpt is not None:
        net, meta = load_checkpoint(ckpt)
        if meta["config_hash"] != config_hash(cfg):
            raise ValueError(f"{ckpt}: checkpoint was written with a different config")
        rng.bit_generator.state = meta["rng_state"]
        start = meta["next_update"]
        if metrics_path.exists():
            rows = [r for r in read_metrics(metrics_path) if r["update"] < start]
        log.info("resuming from %s at update %d", ckpt, start)
    with open(metrics_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
    last_ckpt = ckpt
    done_here = 0
    for u in range(start, cfg.updates):
        rollout = collect_rollout(env, net, cfg.ppo.rollout_steps, rng)
        batch = rollout.to_batch(cfg.ppo.gamma, cfg.ppo.gae_lambda)
        try:
            stats = ppo_update(net, batch, cfg.ppo, rng)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"update {u}: {exc}; last good checkpoint: {last_ckpt}") \
                from exc
        if not net.all_finite():
            raise TrainingDiverged(f"update {u}: non-finite parameters; last good checkpoint: "
                                   f"{last_ckpt}")
        row = _metrics_row(u, rollout, stats, net)
        rows.append(row)
        with open(metrics_path, "a", newline="") as f:
            csv.writer(f).writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
        log.info("update %d: reward %.4f clip %.3f kl %.4f", u, row["mean_reward"],
                 row["clip_frac"], row["approx_kl"])
        if (u + 1) % cfg.checkpoint_every == 0 or u + 1 == cfg.updates:
            last_ckpt = out / "checkpoints" / f"update_{u + 1:06d}.npz"
            save_checkpoint(last_ckpt, net, rng, u + 1, cfg)
        done_here += 1
        if stop_after is not None and done_here >= stop_after:
            if last_ckpt is None or not str(last_ckpt).endswith(f"{u + 1:06d}.npz"):
                last_ckpt = out / "checkpoints" / f"update_{u + 1:06d}.npz"
                save_checkpoint(last_ckpt, net, rng, u + 1, cfg)
            break
    return TrainResult(net, rows, last_ckpt)
