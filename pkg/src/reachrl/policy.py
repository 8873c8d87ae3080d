"""Actor-critic MLP with a diagonal Gaussian head and exact reverse-mode gradients.

All parameters live in one flat float64 vector (``PolicyParams.flat``); named
entries are views into it. That keeps the optimizer, checkpoints and the
finite-difference checks trivial.
"""
import functools
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_STD_INIT = -0.5
LOG_STD_BOUNDS = (-5.0, 2.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

CHECKPOINT_MAGIC = b"REACHRL-POLICY"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def make_layout(obs_dim=18, hidden=(64, 64), act_dim=6):
    """Ordered ``(name, shape)`` pairs for the flat parameter vector."""
    layout = []
    for prefix, out_dim in (("actor", act_dim), ("critic", 1)):
        sizes = [obs_dim, *hidden, out_dim]
        for k in range(len(sizes) - 1):
            layout.append((f"{prefix}.W{k}", (sizes[k], sizes[k + 1])))
            layout.append((f"{prefix}.b{k}", (sizes[k + 1],)))
    layout.append(("log_std", (act_dim,)))
    return tuple(layout)


@functools.lru_cache(maxsize=32)
def _slots(layout):
    slots = {}
    start = 0
    for key, shape in layout:
        size = int(np.prod(shape))
        slots[key] = (start, start + size, shape)
        start += size
    return slots, start


@dataclass(frozen=True)
class PolicyParams:
    flat: np.ndarray
    layout: tuple

    def __post_init__(self):
        slots, expected = _slots(self.layout)
        if self.flat.shape != (expected,):
            raise ValueError(f"flat vector has shape {self.flat.shape}, layout needs ({expected},)")
        object.__setattr__(self, "_slots", slots)

    def __getitem__(self, name):
        start, stop, shape = self._slots[name]
        return self.flat[start:stop].reshape(shape)

    def names(self):
        return [k for k, _ in self.layout]

    @property
    def n_layers(self):
        return sum(1 for k, _ in self.layout if k.startswith("actor.W"))

    @property
    def obs_dim(self):
        return self.layout[0][1][0]

    @property
    def act_dim(self):
        return self.layout[-1][1][0]

    def replace(self, flat):
        return PolicyParams(np.array(flat, dtype=np.float64), self.layout)

    def zeros_like(self):
        return PolicyParams(np.zeros_like(self.flat), self.layout)


def _orthogonal(rng, shape, gain):
    a = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


def init_policy(seed, obs_dim=18, hidden=(64, 64), act_dim=6):
    """Orthogonal init: gain sqrt(2) on hidden layers, 0.01 on the action mean
    layer, 1 on the value layer; zero biases; log-std at -0.5."""
    rng = np.random.default_rng(seed)
    layout = make_layout(obs_dim, hidden, act_dim)
    params = PolicyParams(np.zeros(sum(int(np.prod(s)) for _, s in layout)), layout)
    n = params.n_layers
    for prefix, out_gain in (("actor", 0.01), ("critic", 1.0)):
        for k in range(n):
            w = params[f"{prefix}.W{k}"]
            w[...] = _orthogonal(rng, w.shape, out_gain if k == n - 1 else math.sqrt(2.0))
    params["log_std"][...] = LOG_STD_INIT
    return params


def _mlp(params, prefix, x):
    acts = [x]
    n = params.n_layers
    h = x
    for k in range(n):
        z = h @ params[f"{prefix}.W{k}"] + params[f"{prefix}.b{k}"]
        h = np.tanh(z) if k < n - 1 else z
        acts.append(h)
    return acts


def actor_critic_forward(params, obs):
    """Return ``(mean, std, value)``; batched if ``obs`` is 2-D."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != params.obs_dim:
        raise ValueError(f"observation dimension {obs.shape[-1]} != {params.obs_dim}")
    mean = _mlp(params, "actor", obs)[-1]
    value = _mlp(params, "critic", obs)[-1][..., 0]
    std = np.exp(params["log_std"])
    return mean, np.broadcast_to(std, mean.shape).copy(), value


def gaussian_log_prob(mean, std, a):
    mean, std, a = (np.asarray(v, dtype=np.float64) for v in (mean, std, a))
    z = (a - mean) / std
    return np.sum(-0.5 * z * z - np.log(std) - HALF_LOG_2PI, axis=-1)


def gaussian_entropy(std):
    std = np.asarray(std, dtype=np.float64)
    return np.sum(0.5 + HALF_LOG_2PI + np.log(std), axis=-1)


def clipped_surrogate(ratio, adv, clip_eps):
    """Per-sample ``min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)``."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


@dataclass(frozen=True)
class LossSpec:
    """Which scalar to differentiate: policy, value and entropy terms with
    their coefficients, times an overall ``scale``."""

    clip_eps: float = 0.2
    policy_coef: float = 1.0
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    scale: float = 1.0


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.obs.shape[0]

    def take(self, idx):
        return Batch(self.obs[idx], self.actions[idx], self.logp_old[idx], self.advantages[idx], self.returns[idx])


def _forward_terms(params, batch, spec):
    if len(batch) == 0:
        raise ValueError("empty batch")
    actor = _mlp(params, "actor", batch.obs)
    critic = _mlp(params, "critic", batch.obs)
    mean = actor[-1]
    value = critic[-1][:, 0]
    log_std = params["log_std"]
    std = np.exp(log_std)
    logp = gaussian_log_prob(mean, std, batch.actions)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(logp - batch.logp_old)
    bad = np.flatnonzero(~np.isfinite(ratio))
    if bad.size:
        i = int(bad[0])
        raise NonFiniteError(f"non-finite probability ratio at sample {i}: "
                             f"logp_new={logp[i]!r}, logp_old={batch.logp_old[i]!r}")
    surr = clipped_surrogate(ratio, batch.advantages, spec.clip_eps)
    entropy = gaussian_entropy(std)
    pi_loss = -np.mean(surr)
    v_loss = np.mean((value - batch.returns) ** 2)
    loss = spec.scale * (spec.policy_coef * pi_loss + spec.value_coef * v_loss - spec.entropy_coef * entropy)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss: pi={pi_loss!r} v={v_loss!r} entropy={entropy!r}")
    log_ratio = logp - batch.logp_old
    diag = {
        "loss": float(loss),
        "pi_loss": float(pi_loss),
        "v_loss": float(v_loss),
        "entropy": float(entropy),
        "approx_kl": float(np.mean((ratio - 1.0) - log_ratio)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > spec.clip_eps)),
    }
    return actor, critic, std, ratio, diag


def ppo_loss(params, batch, spec=LossSpec()):
    """Scalar loss and diagnostics; advantages are used as given."""
    *_, diag = _forward_terms(params, batch, spec)
    return diag["loss"], diag


def _backprop(params, prefix, acts, d_out, grads):
    n = params.n_layers
    delta = d_out
    for k in range(n - 1, -1, -1):
        grads[f"{prefix}.W{k}"][...] = acts[k].T @ delta
        grads[f"{prefix}.b{k}"][...] = delta.sum(axis=0)
        if k:
            delta = (delta @ params[f"{prefix}.W{k}"].T) * (1.0 - acts[k] ** 2)


def gradients(params, spec, batch):
    """Exact gradient of the loss described by ``spec`` on ``batch``.

    Returns ``(loss, grads, diagnostics)`` with ``grads`` shaped like ``params``.
    """
    actor, critic, std, ratio, diag = _forward_terms(params, batch, spec)
    b = len(batch)
    adv = batch.advantages
    mean = actor[-1]
    value = critic[-1][:, 0]

    # d surrogate / d logp: ratio * A where the unclipped branch is the minimum
    unclipped = ratio * adv
    active = unclipped <= np.clip(ratio, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps) * adv
    d_logp = -spec.scale * spec.policy_coef * np.where(active, unclipped, 0.0) / b

    z = (batch.actions - mean) / std
    d_mean = d_logp[:, None] * z / std
    d_log_std = d_logp @ (z * z - 1.0) - spec.scale * spec.entropy_coef
    d_value = spec.scale * spec.value_coef * 2.0 * (value - batch.returns) / b

    grads = params.zeros_like()
    _backprop(params, "actor", actor, d_mean, grads)
    _backprop(params, "critic", critic, d_value[:, None], grads)
    grads["log_std"][...] = d_log_std
    return diag["loss"], grads, diag


def save_checkpoint(params, path):
    """Write ``params`` atomically.

    Layout: ``REACHRL-POLICY <version>\\n``, one JSON header line
    ``{"dtype": "<f8", "arrays": [[name, shape], ...]}``, then the arrays'
    values as little-endian float64, row-major, in header order.
    """
    path = Path(path)
    header = {"dtype": "<f8", "arrays": [[k, list(s)] for k, s in params.layout]}
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" %d\n" % CHECKPOINT_VERSION)
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(params.flat.astype("<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            first = fh.readline().split()
            if len(first) != 2 or first[0] != CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path}: not a policy checkpoint")
            if int(first[1]) != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {int(first[1])}")
            header = json.loads(fh.readline())
            raw = fh.read()
    except (OSError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    layout = tuple((k, tuple(s)) for k, s in header["arrays"])
    expected = sum(int(np.prod(s)) for _, s in layout) * 8
    if len(raw) != expected:
        raise CheckpointError(f"{path}: payload is {len(raw)} bytes, header promises {expected}")
    flat = np.frombuffer(raw, dtype=header.get("dtype", "<f8")).astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise CheckpointError(f"{path}: non-finite parameters")
    return PolicyParams(flat, layout)
