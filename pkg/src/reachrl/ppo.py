"""PPO with the clipped surrogate objective and GAE, driving ReachEnv rollouts."""
import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import kernels
from .config import ConfigError
from .env import EnvConfig, ReachEnv
from .chain import load_chain
from .policy import (
    LOG_STD_BOUNDS,
    Batch,
    LossSpec,
    NonFiniteError,
    actor_critic_forward,
    gaussian_log_prob,
    gradients,
    init_policy,
    save_checkpoint,
)

log = logging.getLogger(__name__)

TRAINLOG_HEADER = ("update", "steps", "mean_ep_reward", "mean_disc_return", "pi_loss", "v_loss",
                   "approx_kl", "mean_final_dist")


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    learning_rate: float = 3e-4
    n_steps: int = 2048
    n_envs: int = 1
    epochs: int = 10
    minibatch: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    grad_norm_clip: float = 0.5
    total_steps: int = 300_000
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError("gamma and gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive")
        if self.n_steps <= 0 or self.n_envs <= 0 or self.epochs <= 0:
            raise ConfigError("n_steps, n_envs and epochs must be positive")
        if not 0 < self.minibatch <= self.n_steps * self.n_envs:
            raise ConfigError("minibatch must be in (0, n_steps * n_envs]")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")

    @classmethod
    def from_doc(cls, doc, **overrides):
        if "ppo" in doc:
            doc = doc["ppo"]
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in {**doc, **overrides}.items():
            if key not in known:
                raise ConfigError(f"ppo section: unknown key {key!r}")
            kwargs[key] = value
        try:
            for f in fields(cls):
                if f.name in kwargs:
                    kwargs[f.name] = int(kwargs[f.name]) if f.type is int or f.type == "int" else float(kwargs[f.name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"ppo section: {exc}") from exc
        return cls(**kwargs)

    def loss_spec(self):
        return LossSpec(self.clip_eps, 1.0, self.value_coef, self.entropy_coef)


class EnvSet:
    """A fixed group of environments stepped in lockstep, plus per-episode
    bookkeeping (undiscounted and discounted return) for logging."""

    def __init__(self, envs, gamma=0.99):
        self.envs = list(envs)
        self.gamma = gamma
        self.obs = np.stack([env.reset() for env in self.envs])
        n = len(self.envs)
        self._ep_reward = np.zeros(n)
        self._ep_disc = np.zeros(n)
        self._ep_len = np.zeros(n, dtype=np.int64)

    def __len__(self):
        return len(self.envs)

    def step(self, actions):
        """Step every env; finished episodes auto-reset.

        Returns rewards, dones, the final observations of episodes cut by the
        time limit (``None`` elsewhere) and the finished-episode records.
        """
        n = len(self.envs)
        rewards = np.empty(n)
        dones = np.zeros(n)
        truncated = [None] * n
        finished = []
        for i, env in enumerate(self.envs):
            obs, r, done, info = env.step(actions[i])
            rewards[i] = r
            self._ep_disc[i] += self.gamma ** self._ep_len[i] * r
            self._ep_reward[i] += r
            self._ep_len[i] += 1
            if done:
                dones[i] = 1.0
                finished.append({"reward": self._ep_reward[i], "disc_return": self._ep_disc[i],
                                 "length": int(self._ep_len[i]), "final_dist": info["distance"],
                                 "collision": info["collision"]})
                self._ep_reward[i] = self._ep_disc[i] = 0.0
                self._ep_len[i] = 0
                if info["timeout"] and not info["collision"]:
                    truncated[i] = obs
                obs = env.reset()
            self.obs[i] = obs
        return rewards, dones, truncated, finished


@dataclass
class RolloutBuffer:
    obs: np.ndarray          # (T, E, obs_dim)
    actions: np.ndarray      # (T, E, act_dim)
    log_prob: np.ndarray     # (T, E)
    rewards: np.ndarray      # (T, E)
    values: np.ndarray       # (T, E)
    dones: np.ndarray        # (T, E); 1 where the step ended its episode
    last_value: np.ndarray   # (E,) bootstrap value of the state after the final step
    episodes: list = field(default_factory=list)

    def __len__(self):
        return self.rewards.shape[0]


def collect_rollouts(envset, params, n_steps, rng, gamma=None):
    """Sample ``n_steps`` transitions per environment from the Gaussian policy.

    Episodes cut by the time limit are not true terminals: the observation has
    no clock, so the stored reward of that step gets ``gamma * V(final obs)``
    added (``gamma`` defaults to the EnvSet's). Collisions stay terminal.
    """
    if gamma is None:
        gamma = envset.gamma
    if n_steps <= 0:
        raise ValueError("n_steps must be positive")
    n_envs = len(envset)
    obs_dim, act_dim = params.obs_dim, params.act_dim
    buf = RolloutBuffer(
        obs=np.empty((n_steps, n_envs, obs_dim)),
        actions=np.empty((n_steps, n_envs, act_dim)),
        log_prob=np.empty((n_steps, n_envs)),
        rewards=np.empty((n_steps, n_envs)),
        values=np.empty((n_steps, n_envs)),
        dones=np.empty((n_steps, n_envs)),
        last_value=np.empty(n_envs),
    )
    for t in range(n_steps):
        obs = envset.obs.copy()
        mean, std, value = actor_critic_forward(params, obs)
        actions = mean + std * rng.standard_normal(mean.shape)
        buf.obs[t] = obs
        buf.actions[t] = actions
        buf.log_prob[t] = gaussian_log_prob(mean, std, actions)
        buf.values[t] = value
        rewards, buf.dones[t], truncated, finished = envset.step(actions)
        for i, final_obs in enumerate(truncated):
            if final_obs is not None:
                rewards[i] += gamma * actor_critic_forward(params, final_obs)[2]
        buf.rewards[t] = rewards
        buf.episodes.extend(finished)
    buf.last_value[:] = actor_critic_forward(params, envset.obs)[2]
    return buf


def compute_gae(buffer, gamma, lam):
    """Advantages and returns (advantages + values), both shaped (T, E)."""
    adv = kernels.gae(np.ascontiguousarray(buffer.rewards), np.ascontiguousarray(buffer.values),
                      np.ascontiguousarray(buffer.dones), np.ascontiguousarray(buffer.last_value),
                      float(gamma), float(lam))
    return adv, adv + buffer.values


class Adam:
    """Adam on a flat parameter vector (betas 0.9/0.999, eps 1e-8)."""

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, flat, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return flat - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def flatten_buffer(buffer, advantages, returns):
    """Merge time and env axes into one sample axis."""
    n = buffer.rewards.size
    return Batch(buffer.obs.reshape(n, -1), buffer.actions.reshape(n, -1), buffer.log_prob.reshape(n),
                 advantages.reshape(n), returns.reshape(n))


def normalize_advantages(adv):
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def update(params, buffer, config, rng, optimizer=None):
    """``config.epochs`` shuffled minibatch passes of Adam on the PPO loss.

    Returns ``(new_params, stats)``; the optimizer (created if omitted) is
    advanced in place.
    """
    adv, ret = compute_gae(buffer, config.gamma, config.gae_lambda)
    batch = flatten_buffer(buffer, adv, ret)
    batch.advantages = normalize_advantages(batch.advantages)
    if optimizer is None:
        optimizer = Adam(params.flat.size)
    spec = config.loss_spec()
    lo, hi = LOG_STD_BOUNDS
    flat = params.flat.copy()
    current = params
    sums = {"pi_loss": 0.0, "v_loss": 0.0, "approx_kl": 0.0, "clip_frac": 0.0, "grad_norm": 0.0}
    n_mb = 0
    n = len(batch)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            mb = batch.take(order[start:start + config.minibatch])
            _, grads, diag = gradients(current, spec, mb)
            g = grads.flat
            norm = float(np.sqrt(g @ g))
            if config.grad_norm_clip and norm > config.grad_norm_clip:
                g = g * (config.grad_norm_clip / (norm + 1e-12))
            flat = optimizer.step(flat, g, config.learning_rate)
            current = current.replace(flat)
            current["log_std"][...] = np.clip(current["log_std"], lo, hi)
            flat = current.flat
            if not np.all(np.isfinite(flat)):
                raise NonFiniteError(f"parameters diverged in epoch {epoch}, minibatch starting {start}: "
                                     f"grad_norm={norm!r}, loss terms={diag}")
            for key in ("pi_loss", "v_loss", "approx_kl", "clip_frac"):
                sums[key] += diag[key]
            sums["grad_norm"] += norm
            n_mb += 1
    stats = {k: v / n_mb for k, v in sums.items()}
    return current, stats


def make_envs(doc, n_envs, seed):
    chain = load_chain(doc)
    env_cfg = EnvConfig.from_doc(doc)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    seeds = seed.spawn(n_envs)
    return [ReachEnv(chain, env_cfg, seed=s) for s in seeds]


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def append(self, row):
        if self.rows and row["steps"] < self.rows[-1]["steps"]:
            raise ValueError("TrainLog rows must be appended in env-step order")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)


def format_row(row):
    return [str(row["update"]), str(row["steps"])] + [repr(float(row[k])) for k in TRAINLOG_HEADER[2:]]


def read_trainlog(path):
    """Parse a TrainLog CSV; raises ValueError on a wrong header or bad values."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRAINLOG_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRAINLOG_HEADER)}")
        log_ = TrainLog()
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(TRAINLOG_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(TRAINLOG_HEADER)} fields")
            try:
                row = {"update": int(rec[0]), "steps": int(rec[1])}
                row.update({k: float(v) for k, v in zip(TRAINLOG_HEADER[2:], rec[2:])})
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            log_.append(row)
    return log_


def _mean(values):
    return float(np.mean(values)) if values else math.nan


def _seed_streams(seed):
    """Independent env, policy-init and action-sampling seeds."""
    return np.random.SeedSequence(seed).spawn(3)


def initial_policy(seed):
    """The parameters ``train`` starts from for this seed."""
    return init_policy(_seed_streams(seed)[1].generate_state(1)[0])


def train(config, doc, out_dir=None, on_update=None):
    """Run collect/update cycles until ``config.total_steps`` env steps.

    With ``out_dir`` set, writes ``trainlog.csv`` (one row per update,
    renamed into place on success), periodic checkpoints under
    ``checkpoints/`` and ``policy.ckpt`` at the end.
    """
    env_seed, policy_seed, sample_seed = _seed_streams(config.seed)
    envs = make_envs(doc, config.n_envs, env_seed)
    envset = EnvSet(envs, config.gamma)
    params = init_policy(policy_seed.generate_state(1)[0])
    rng = np.random.default_rng(sample_seed)
    optimizer = Adam(params.flat.size)
    steps_per_update = config.n_steps * config.n_envs
    n_updates = max(1, math.ceil(config.total_steps / steps_per_update))
    trainlog = TrainLog()

    out = Path(out_dir) if out_dir is not None else None
    partial = None
    fh = writer = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        partial = out / "trainlog.csv.partial"
        fh = open(partial, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(TRAINLOG_HEADER)
    try:
        steps = 0
        for u in range(1, n_updates + 1):
            buffer = collect_rollouts(envset, params, config.n_steps, rng)
            steps += steps_per_update
            params, stats = update(params, buffer, config, rng, optimizer)
            eps = buffer.episodes
            row = {
                "update": u,
                "steps": steps,
                "mean_ep_reward": _mean([e["reward"] for e in eps]),
                "mean_disc_return": _mean([e["disc_return"] for e in eps]),
                "pi_loss": stats["pi_loss"],
                "v_loss": stats["v_loss"],
                "approx_kl": stats["approx_kl"],
                "mean_final_dist": _mean([e["final_dist"] for e in eps]),
            }
            trainlog.append(row)
            if writer is not None:
                writer.writerow(format_row(row))
                fh.flush()
                if config.checkpoint_every and u % config.checkpoint_every == 0:
                    save_checkpoint(params, out / "checkpoints" / f"policy_u{u:05d}.ckpt")
            if on_update is not None:
                on_update(row)
        if out is not None:
            fh.close()
            fh = None
            save_checkpoint(params, out / "policy.ckpt")
            os.replace(partial, out / "trainlog.csv")
    except BaseException:
        if fh is not None:
            fh.close()
        if partial is not None and partial.exists():
            partial.unlink()
        raise
    return params, trainlog


def config_dict(config):
    return asdict(config)


def evaluate(params, doc, n_episodes, seed, success_radius=0.1):
    """Run ``n_episodes`` with the mean action; report final hand-target distances.

    Episode ``k`` uses a target drawn from ``SeedSequence(seed).spawn``'s k-th
    child, so two policies evaluated with the same seed see the same targets.
    """
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    chain = load_chain(doc)
    env_cfg = EnvConfig.from_doc(doc)
    env = ReachEnv(chain, env_cfg)
    finals, rewards = [], []
    for child in np.random.SeedSequence(seed).spawn(n_episodes):
        obs = env.reset(seed=child)
        total = 0.0
        done = False
        info = {"distance": env.hand_distance()}
        while not done:
            mean, _, _ = actor_critic_forward(params, obs)
            obs, r, done, info = env.step(mean)
            total += r
        finals.append(info["distance"])
        rewards.append(total)
    finals = np.array(finals)
    return {
        "episodes": n_episodes,
        "mean_final_dist": float(np.mean(finals)),
        "median_final_dist": float(np.median(finals)),
        "mean_ep_reward": float(np.mean(rewards)),
        "success_rate": float(np.mean(finals < success_radius)),
    }
