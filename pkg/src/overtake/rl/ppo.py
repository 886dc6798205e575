"""PPO pieces: Gaussian policy sampling, GAE, clipped loss and its gradient."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .network import PolicyNet, adam_step, backward, forward, global_norm

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PpoConfig:
    epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    epochs: int = 10
    minibatch_size: int = 256
    rollout_steps: int = 2048
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must be in (0, 1]")
        if self.epochs < 1 or self.minibatch_size < 1 or self.rollout_steps < 1:
            raise ValueError("epochs, minibatch_size and rollout_steps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray      # unclipped Gaussian samples
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.obs)

    def subset(self, idx) -> Batch:
        return Batch(self.obs[idx], self.actions[idx], self.logp_old[idx], self.advantages[idx],
                     self.returns[idx])


def gaussian_logp(a, mean, log_std) -> np.ndarray:
    z = (a - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std + 0.5 * (1.0 + LOG_2PI)))


def sample_action(net: PolicyNet, obs, rng: np.random.Generator, deterministic: bool = False):
    """(action clipped to [-1, 1], unclipped sample, log-prob of the sample, value)."""
    out = forward(net, obs)
    mean, log_std = out.mean[0], out.log_std
    if deterministic:
        sample = mean.copy()
    else:
        sample = mean + np.exp(log_std) * rng.standard_normal(len(mean))
    return (np.clip(sample, -1.0, 1.0), sample, float(gaussian_logp(sample, mean, log_std)),
            float(out.value[0]))


def gae_advantages(rewards, values, dones, last_value, gamma: float, lam: float):
    """Generalized advantage estimates and value targets for one agent's stream.

    ``dones[t]`` marks that the episode ended after step t; ``last_value`` is the
    bootstrap value of the state following the final step.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("rewards, values and dones must have equal length")
    T = len(rewards)
    adv = np.zeros(T)
    next_value, gae = float(last_value), 0.0
    for t in reversed(range(T)):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        gae = delta + gamma * lam * live * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


def normalize(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    if len(adv) < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class LossInfo:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_frac: float
    approx_kl: float
    grad_norm: float = 0.0


def loss_and_grads(net: PolicyNet, batch: Batch, cfg: PpoConfig, need_grads: bool = True):
    """Clipped-surrogate loss, diagnostics and (optionally) parameter gradients.

    loss = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) + c_v mean((V - R)^2) - c_e H
    """
    out = forward(net, batch.obs)
    mean, log_std, value = out.mean, out.log_std, out.value
    std = np.exp(log_std)
    logp = gaussian_logp(batch.actions, mean, log_std)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(logp - batch.logp_old)
    if not np.all(np.isfinite(ratio)):
        raise FloatingPointError("non-finite probability ratio (stale batch?)")
    A = batch.advantages
    eps = cfg.epsilon
    surr1 = ratio * A
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * A
    unclipped = surr1 <= surr2
    n = len(batch)
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    value_loss = float(np.mean((value - batch.returns) ** 2))
    entropy = gaussian_entropy(log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    info = LossInfo(loss, policy_loss, value_loss, entropy,
                    clip_frac=float(np.mean(np.abs(ratio - 1.0) > eps)),
                    approx_kl=float(np.mean((ratio - 1.0) - np.log(ratio))))
    if not need_grads:
        return info, None
    d_logp = np.where(unclipped, -surr1 / n, 0.0)
    z = (batch.actions - mean) / std
    d_mean = d_logp[:, None] * z / std
    d_log_std = np.sum(d_logp[:, None] * (z * z - 1.0), axis=0) - cfg.entropy_coef
    d_value = cfg.value_coef * 2.0 * (value - batch.returns) / n
    return info, backward(net, out, d_mean, d_log_std, d_value)


def ppo_loss(batch: Batch, net: PolicyNet, cfg: PpoConfig) -> LossInfo:
    return loss_and_grads(net, batch, cfg, need_grads=False)[0]


def backprop_and_step(net: PolicyNet, batch: Batch, cfg: PpoConfig) -> LossInfo:
    """One clipped-norm Adam step in place. Non-finite gradients leave ``net`` unchanged."""
    info, grads = loss_and_grads(net, batch, cfg)
    norm = global_norm(grads)
    info.grad_norm = norm
    if not math.isfinite(norm) or not math.isfinite(info.loss):
        raise FloatingPointError("non-finite loss or gradient; update skipped")
    if norm > cfg.max_grad_norm:
        scale = cfg.max_grad_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    backup = net.copy()
    adam_step(net, grads, cfg.lr)
    if not net.all_finite():
        net.params, net.m, net.v, net.step = backup.params, backup.m, backup.v, backup.step
        raise FloatingPointError("non-finite parameters after step; update reverted")
    return info


def ppo_update(net: PolicyNet, batch: Batch, cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """Epochs of shuffled minibatch steps; returns averaged diagnostics."""
    if cfg.normalize_advantages:
        batch = Batch(batch.obs, batch.actions, batch.logp_old, normalize(batch.advantages),
                      batch.returns)
    n = len(batch)
    mb = min(cfg.minibatch_size, n)
    infos = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            infos.append(backprop_and_step(net, batch.subset(perm[start:start + mb]), cfg))
    keys = ("loss", "policy_loss", "value_loss", "entropy", "clip_frac", "approx_kl", "grad_norm")
    return {k: float(np.mean([getattr(i, k) for i in infos])) for k in keys}
