"""Actor and critic MLPs in float64 numpy, with manual backprop and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -3.0, 0.5


def _layer_names(prefix, n_layers):
    out = []
    for i in range(n_layers):
        out += [f"{prefix}W{i}", f"{prefix}b{i}"]
    return out


@dataclass
class PolicyNet:
    """Parameters (ordered dict of arrays) plus Adam moments.

    Actor: obs -> hidden (ReLU) ... -> tanh mean; state-independent ``log_std``.
    Critic: obs -> hidden (ReLU) ... -> linear scalar value.
    """

    params: dict[str, np.ndarray]
    hidden: tuple[int, ...] = (256, 256)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    @property
    def actor_keys(self) -> list[str]:
        return _layer_names("a", self.n_layers)

    @property
    def critic_keys(self) -> list[str]:
        return _layer_names("c", self.n_layers)

    @property
    def obs_dim(self) -> int:
        return self.params["aW0"].shape[0]

    @property
    def act_dim(self) -> int:
        return self.params["log_std"].shape[0]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> PolicyNet:
        return PolicyNet({k: p.copy() for k, p in self.params.items()}, self.hidden,
                         {k: p.copy() for k, p in self.m.items()},
                         {k: p.copy() for k, p in self.v.items()}, self.step)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params.values())


def init_policy(rng: np.random.Generator, obs_dim: int = 162, act_dim: int = 2,
                hidden=(256, 256), log_std: float = -0.5) -> PolicyNet:
    """He-normal hidden layers; small actor head so initial means sit near zero."""
    params = {}
    sizes = [obs_dim, *hidden]
    for prefix, out_dim, head_scale in (("a", act_dim, 0.01), ("c", 1, 1.0)):
        for i, (fi, fo) in enumerate(zip(sizes, sizes[1:])):
            params[f"{prefix}W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fi), (fi, fo))
            params[f"{prefix}b{i}"] = np.zeros(fo)
        k = len(hidden)
        params[f"{prefix}W{k}"] = rng.normal(0.0, head_scale / np.sqrt(sizes[-1]),
                                             (sizes[-1], out_dim))
        params[f"{prefix}b{k}"] = np.zeros(out_dim)
    params["log_std"] = np.full(act_dim, float(log_std))
    return PolicyNet(params, tuple(hidden))


def _mlp_forward(params, prefix, n_layers, x, name):
    acts = [x]
    h = x
    for i in range(n_layers):
        with np.errstate(invalid="ignore", over="ignore"):
            z = h @ params[f"{prefix}W{i}"] + params[f"{prefix}b{i}"]
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite activations in {name} layer {i}")
        acts.append(h)
    return h, acts


def _mlp_backward(params, prefix, n_layers, acts, grad_out, grads):
    g = grad_out
    for i in reversed(range(n_layers)):
        grads[f"{prefix}W{i}"] = acts[i].T @ g
        grads[f"{prefix}b{i}"] = g.sum(axis=0)
        if i > 0:
            g = (g @ params[f"{prefix}W{i}"].T) * (acts[i] > 0)
    return grads


@dataclass
class ForwardCache:
    mean: np.ndarray
    log_std: np.ndarray
    value: np.ndarray
    actor_acts: list
    critic_acts: list


def forward(net: PolicyNet, obs) -> ForwardCache:
    x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    z, a_acts = _mlp_forward(net.params, "a", net.n_layers, x, "actor")
    v, c_acts = _mlp_forward(net.params, "c", net.n_layers, x, "critic")
    return ForwardCache(np.tanh(z), net.params["log_std"], v[:, 0], a_acts, c_acts)


def policy_forward(net: PolicyNet, obs):
    """(mean, log_std, value) for one observation or a batch."""
    out = forward(net, obs)
    if np.ndim(obs) == 1:
        return out.mean[0], out.log_std, float(out.value[0])
    return out.mean, out.log_std, out.value


def backward(net: PolicyNet, cache: ForwardCache, d_mean, d_log_std, d_value) -> dict:
    """Parameter gradients given loss gradients w.r.t. mean (N, A), log_std (A,), value (N,)."""
    grads = {}
    d_z = d_mean * (1.0 - cache.mean ** 2)
    _mlp_backward(net.params, "a", net.n_layers, cache.actor_acts, d_z, grads)
    _mlp_backward(net.params, "c", net.n_layers, cache.critic_acts, d_value[:, None], grads)
    grads["log_std"] = np.asarray(d_log_std, dtype=float)
    return {k: grads[k] for k in net.params}


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def adam_step(net: PolicyNet, grads: dict, lr: float, b1: float = 0.9, b2: float = 0.999,
              eps: float = 1e-8) -> None:
    net.step += 1
    for k, g in grads.items():
        m = net.m.get(k)
        if m is None:
            m = net.m[k] = np.zeros_like(g)
            net.v[k] = np.zeros_like(g)
        v = net.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** net.step)
        vhat = v / (1 - b2 ** net.step)
        net.params[k] -= lr * mhat / (np.sqrt(vhat) + eps)
    np.clip(net.params["log_std"], LOG_STD_MIN, LOG_STD_MAX, out=net.params["log_std"])


def flat_params(net: PolicyNet) -> np.ndarray:
    return np.concatenate([p.ravel() for p in net.params.values()])


def save_arrays(net: PolicyNet) -> dict[str, np.ndarray]:
    out = {f"p/{k}": v for k, v in net.params.items()}
    out.update({f"m/{k}": v for k, v in net.m.items()})
    out.update({f"v/{k}": v for k, v in net.v.items()})
    out["adam_step"] = np.array(net.step)
    out["hidden"] = np.array(net.hidden)
    return out


def load_arrays(arrays) -> PolicyNet:
    def group(tag):
        return {k.split("/", 1)[1]: np.array(arrays[k]) for k in arrays if k.startswith(tag + "/")}
    params = group("p")
    hidden = tuple(int(h) for h in np.array(arrays["hidden"]))
    n = len(hidden) + 1
    order = _layer_names("a", n) + _layer_names("c", n) + ["log_std"]
    params = {k: params[k] for k in order}
    m, v = group("m"), group("v")
    return PolicyNet(params, hidden, {k: m[k] for k in order if k in m},
                     {k: v[k] for k in order if k in v}, int(np.asarray(arrays["adam_step"]).reshape(-1)[0]))
