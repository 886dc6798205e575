"""Run configuration: built-in defaults, a JSON file, then environment overrides.

Any leaf key can be overridden from the environment as
``OVERTAKE_<SECTION>__<KEY>[__<SUBKEY>...]=<value>``, for example
``OVERTAKE_TRAIN__PPO__LR=1e-3`` or ``OVERTAKE_SCENARIO__CAMERA_RATE=2``.
Values are parsed as JSON when possible and kept as strings otherwise.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from ..fusion import UkfParams
from ..rl.env import EnvConfig
from ..rl.ppo import PpoConfig
from ..rl.train import TrainConfig

ENV_PREFIX = "OVERTAKE_"


class ConfigError(ValueError):
    """Bad config file or override; the CLI maps this to a usage error."""


# Corridor training profile. gamma is lowered from the library default so that
# the constant trailing penalty does not make an early crash the best return.
CORRIDOR_PPO = PpoConfig(gamma=0.9, rollout_steps=512, epochs=4, minibatch_size=128)


def default_config() -> dict:
    train = TrainConfig(updates=200, checkpoint_every=10, ppo=CORRIDOR_PPO, env=EnvConfig())
    return {
        "seed": 0,
        "scenario": {
            "map": None,              # JSON map file; None builds the corridor below
            "raceline": None,         # raceline CSV; None uses the corridor centerline
            "spawns": None,           # JSON spawn list; None draws random spawns
            "corridor_length": 50.0,
            "corridor_width": 2.5,
            "raceline_spacing": 0.1,
            "opponent": "scripted_pursuit",
            "opponent_checkpoint": None,
            "opponent_speed_frac": 0.4,
            "lidar_rate": 10.0,
            "camera_rate": 1.0,
            "noise": 1.0,
            "duration": 12.0,
        },
        "raceline": {"iterations": 50, "step_size": 1.0, "margin": 0.2, "spacing": 0.1},
        "train": train.to_dict(),
        "eval": {"episodes": 10, "use_fusion": False, "deterministic": True},
        "ukf": UkfParams().to_dict(),
        "log": {"mode": "direct", "duration": 30.0, "lidar_rate": 2.0, "camera_rate": 1.0,
                "noise": 1.0},
        "replay": {"warmup": 2.0},
    }


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_type(where: str, default, v) -> None:
    if default is None or v is None:
        return
    if isinstance(default, bool):
        ok = isinstance(v, bool)
    elif _is_num(default):
        ok = _is_num(v)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(v, (list, tuple))
    else:
        ok = isinstance(v, type(default))
    if not ok:
        raise ConfigError(f"config key {where!r} expects {type(default).__name__}, got {v!r}")


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[k], dict) and out[k] and not isinstance(v, dict):
            raise ConfigError(f"config key {where!r} is a section, got {v!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and out[k]:
            out[k] = _merge(out[k], v, where + ".")
        else:
            _check_type(where, out[k], v)
            out[k] = v
    return out


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    over: dict = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        keys = [k.lower() for k in name[len(ENV_PREFIX):].split("__")]
        if not all(keys):
            raise ConfigError(f"malformed override variable {name}")
        d = over
        for k in keys[:-1]:
            d = d.setdefault(k, {})
            if not isinstance(d, dict):
                raise ConfigError(f"override {name} conflicts with another override")
        d[keys[-1]] = _parse_value(environ[name])
    return over


def load_config(path=None, environ=None, seed: int | None = None) -> dict:
    """Defaults, then ``path`` (JSON), then ``OVERTAKE_*`` variables, then ``seed``."""
    cfg = default_config()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
        cfg = _merge(cfg, data)
    cfg = _merge(cfg, env_overrides(environ))
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg
