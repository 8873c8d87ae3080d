"""Reaching task: observations, velocity actions, shaped reward, episodes."""
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .chain import frame_position, load_chain
from .config import ConfigError

OBS_DIM = 18
UNIT_TOL = 1e-6


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 0.75
    w2: float = 0.25

    def __post_init__(self):
        if abs(self.w1 + self.w2 - 1.0) > 1e-12:
            raise ValueError(f"reward weights must sum to 1, got {self.w1} + {self.w2}")


@dataclass(frozen=True)
class TargetRanges:
    x: tuple = (0.65, 0.85)
    y: tuple = (-0.3, 1.0)
    z: tuple = (0.55, 0.9)
    offset: tuple = (0.0, 0.05, 0.0)

    def __post_init__(self):
        for axis in ("x", "y", "z"):
            lo, hi = getattr(self, axis)
            if lo > hi:
                raise ValueError(f"target range {axis}: lo > hi")

    @property
    def low(self):
        return np.array([self.x[0], self.y[0], self.z[0]])

    @property
    def high(self):
        return np.array([self.x[1], self.y[1], self.z[1]])


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 1.0 / 50.0
    horizon: int = 250
    weights: RewardWeights = RewardWeights()
    ranges: TargetRanges = TargetRanges()
    position_bound: float = 1.2
    hand_frame: str = "right_hand"
    head_frame: str = "head"

    @classmethod
    def from_doc(cls, doc):
        """Build from the ``env`` section (or a whole config containing one)."""
        if "env" in doc:
            doc = doc["env"]
        try:
            tr = doc.get("target_ranges", {})
            ranges = TargetRanges(tuple(tr.get("x", TargetRanges.x)), tuple(tr.get("y", TargetRanges.y)),
                                  tuple(tr.get("z", TargetRanges.z)),
                                  tuple(doc.get("target_offset", TargetRanges.offset)))
            w = doc.get("reward_weights", (0.75, 0.25))
            return cls(dt=float(doc.get("dt", 1.0 / 50.0)), horizon=int(doc.get("horizon", 250)),
                       weights=RewardWeights(float(w[0]), float(w[1])), ranges=ranges,
                       position_bound=float(doc.get("position_bound", 1.2)))
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"env section: {exc}") from exc


def arm_reward(hand, target):
    return math.exp(-float(np.linalg.norm(np.asarray(hand, dtype=float) - np.asarray(target, dtype=float))))


def head_reward(head_dir, head_to_target):
    head_dir = np.asarray(head_dir, dtype=float)
    head_to_target = np.asarray(head_to_target, dtype=float)
    for name, v in (("head_dir", head_dir), ("head_to_target", head_to_target)):
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise ValueError(f"{name} must be unit length, norm={np.linalg.norm(v):.9g}")
    return math.exp(-float(np.linalg.norm(head_dir - head_to_target)))


def combined_reward(a_r, h_r, w=RewardWeights()):
    return w.w1 * a_r + w.w2 * h_r


def sample_target(rng, ranges=TargetRanges()):
    """Uniform point in the target box, then shifted by the configured offset."""
    return rng.uniform(ranges.low, ranges.high) + np.asarray(ranges.offset, dtype=float)


def _unit(v, fallback):
    n = np.linalg.norm(v)
    if n < 1e-12:
        return np.array(fallback, dtype=float)
    return v / n


@dataclass
class Snapshot:
    """Geometry needed for rewards and observations at one joint vector."""

    hand: np.ndarray
    head_pos: np.ndarray
    head_dir: np.ndarray
    head_to_target: np.ndarray
    collision: bool


def measure(chain, q, target, hand_frame="right_hand", head_frame="head"):
    rot_w, pos_w = kernels.fk(chain.parents, chain.off_rot, chain.off_trans, chain.axes, q)
    hand = frame_position(chain, rot_w, pos_w, hand_frame)
    j, offset = chain.frame_anchor(head_frame)
    head_rot = rot_w[j] if offset is None else rot_w[j] @ offset.rotation
    head_pos = frame_position(chain, rot_w, pos_w, head_frame)
    head_dir = _unit(head_rot[:, 0], (1.0, 0.0, 0.0))
    # target at the head origin has no bearing; treat as already looked at
    head_to_target = _unit(target - head_pos, head_dir)
    collision = False
    if chain.pair_a.shape[0]:
        collision = bool(kernels.spheres_overlap(rot_w, pos_w, chain.sphere_joint, chain.sphere_local,
                                                 chain.sphere_radius, chain.pair_a, chain.pair_b))
    return Snapshot(hand, head_pos, head_dir, head_to_target, collision)


def build_observation(chain, q, target, snap=None, position_bound=1.2):
    """18-vector: joint angles, hand, target, head direction, head-to-target direction.

    Angles map [lo, hi] -> [-1, 1]; positions are divided by ``position_bound``
    and clamped. Both directions are unit vectors already.
    """
    if snap is None:
        snap = measure(chain, q, target)
    q_norm = 2.0 * (np.asarray(q) - chain.lo) / (chain.hi - chain.lo) - 1.0
    obs = np.concatenate([
        q_norm,
        np.clip(snap.hand / position_bound, -1.0, 1.0),
        np.clip(np.asarray(target) / position_bound, -1.0, 1.0),
        snap.head_dir,
        snap.head_to_target,
    ])
    return np.clip(obs, -1.0, 1.0)


class EpisodeDone(RuntimeError):
    pass


class ReachEnv:
    """Single reaching episode stream with its own RNG.

    ``reset()`` puts the joints at home (all zeros) and samples a target;
    ``step(action)`` integrates clamped normalized joint velocities for one
    control tick and returns ``(obs, reward, done, info)``.
    """

    def __init__(self, chain, config=EnvConfig(), seed=None):
        self.chain = chain
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.home = np.zeros(chain.n_joints)
        if np.any(self.home < chain.lo) or np.any(self.home > chain.hi):
            raise ConfigError("home pose (all zeros) violates joint limits")
        self.q = self.home.copy()
        self.target = np.zeros(3)
        self.step_count = 0
        self.done = True
        self.obs = None

    @classmethod
    def from_config(cls, doc, seed=None):
        return cls(load_chain(doc), EnvConfig.from_doc(doc), seed=seed)

    def _snap(self):
        return measure(self.chain, self.q, self.target, self.config.hand_frame, self.config.head_frame)

    def _observe(self, snap):
        self.obs = build_observation(self.chain, self.q, self.target, snap, self.config.position_bound)
        return self.obs

    def reset(self, seed=None, target=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.q = self.home.copy()
        self.target = sample_target(self.rng, self.config.ranges) if target is None else np.asarray(target, float)
        self.step_count = 0
        self.done = False
        return self._observe(self._snap())

    def set_target(self, target):
        """Replace the target mid-episode (dynamic-target mode)."""
        self.target = np.asarray(target, dtype=float).reshape(3).copy()
        return self._observe(self._snap())

    def reward_terms(self, snap):
        a_r = arm_reward(snap.hand, self.target)
        h_r = head_reward(snap.head_dir, snap.head_to_target)
        return a_r, h_r, combined_reward(a_r, h_r, self.config.weights)

    def step(self, action):
        if self.done:
            raise EpisodeDone("episode is done; call reset()")
        a = np.clip(np.asarray(action, dtype=float).reshape(self.chain.n_joints), -1.0, 1.0)
        self.q = np.clip(self.q + a * self.chain.vmax * self.config.dt, self.chain.lo, self.chain.hi)
        self.step_count += 1
        snap = self._snap()
        a_r, h_r, reward = self.reward_terms(snap)
        timeout = self.step_count >= self.config.horizon
        self.done = timeout or snap.collision
        info = {
            "distance": float(np.linalg.norm(snap.hand - self.target)),
            "hand": snap.hand,
            "arm_reward": a_r,
            "head_reward": h_r,
            "collision": snap.collision,
            "timeout": timeout,
        }
        return self._observe(snap), reward, self.done, info

    def hand_distance(self):
        return float(np.linalg.norm(self._snap().hand - self.target))
