"""Rollout collection with a shared policy for every learner in the env."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .env import OvertakeEnv
from .network import PolicyNet, forward
from .ppo import Batch, gae_advantages, sample_action

log = logging.getLogger(__name__)


@dataclass
class Stream:
    """One agent's transitions in time order."""
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logp: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    components: list = field(default_factory=list)
    last_value: float = 0.0

    def __len__(self):
        return len(self.rewards)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"obs": np.array(self.obs), "actions": np.array(self.actions),
                "logp": np.array(self.logp), "values": np.array(self.values),
                "rewards": np.array(self.rewards), "dones": np.array(self.dones),
                "components": np.array(self.components).reshape(-1, 7)}


@dataclass
class Rollout:
    streams: list[Stream]
    episode_returns: list[float]
    episodes: int
    collisions: int
    fault: bool = False

    @property
    def n_transitions(self) -> int:
        return sum(len(s) for s in self.streams)

    def mean_reward(self) -> float:
        return float(np.mean(np.concatenate([s.rewards for s in self.streams])))

    def mean_components(self) -> np.ndarray:
        return np.concatenate([np.reshape(s.components, (-1, 7)) for s in self.streams]).mean(0)

    def to_batch(self, gamma: float, lam: float) -> Batch:
        """GAE per stream, then concatenation in stream order."""
        parts = []
        for s in self.streams:
            a = s.arrays()
            adv, ret = gae_advantages(a["rewards"], a["values"], a["dones"], s.last_value, gamma,
                                      lam)
            parts.append((a["obs"], a["actions"], a["logp"], adv, ret))
        return Batch(*(np.concatenate(x) for x in zip(*parts)))


def collect_rollout(env: OvertakeEnv, net: PolicyNet, steps: int, rng: np.random.Generator,
                    deterministic: bool = False, spawns=None) -> Rollout:
    """Run ``steps`` control steps from a fresh reset; every learner acts from ``net``.

    Episodes that end are reset immediately (from ``spawns`` if given, otherwise
    random spawns drawn from ``rng``). Streams that end mid-episode are
    bootstrapped with the critic's value of the current observation.
    """
    obs = env.reset(rng, spawns)
    streams = [Stream() for _ in env.learners]
    ep_ret = np.zeros(len(env.learners))
    returns, episodes, collisions = [], 0, 0
    fault = False
    for _ in range(steps):
        acts = {}
        for k, i in enumerate(env.learners):
            clipped, sample, logp, value = sample_action(net, obs[k], rng, deterministic)
            acts[i] = clipped
            st = streams[k]
            st.obs.append(obs[k])
            st.actions.append(sample)
            st.logp.append(logp)
            st.values.append(value)
        try:
            out = env.step(acts)
        except (ValueError, RuntimeError, FloatingPointError) as exc:
            log.warning("environment fault, returning partial batch: %s", exc)
            for st in streams:
                for key in ("obs", "actions", "logp", "values"):
                    getattr(st, key).pop()
            if streams[0].dones:
                for st in streams:
                    st.dones[-1] = True
            fault = True
            break
        for k, st in enumerate(streams):
            st.rewards.append(out.rewards[k])
            st.components.append(out.components[k])
            st.dones.append(out.done)
        ep_ret += out.rewards
        if out.done:
            episodes += 1
            collisions += int(any(out.collisions))
            returns.extend(ep_ret.tolist())
            ep_ret[:] = 0.0
            obs = env.reset(rng, spawns)
        else:
            obs = out.obs
    if not fault and not (streams[0].dones and streams[0].dones[-1]):
        values = forward(net, np.array(obs)).value
        for k, st in enumerate(streams):
            st.last_value = float(values[k])
    return Rollout(streams, returns, episodes, collisions, fault)
