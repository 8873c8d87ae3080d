"""Kinematic model of the trained joint chain.

Conventions: each joint frame is ``parent_frame * fixed_offset * Rot(axis, q)``;
end effectors hang off a joint with one more fixed offset. Everything is
expressed in the base frame unless a name says otherwise.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .config import ConfigError

ORTHO_TOL = 1e-9
AXIS_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_xyz_rpy(cls, xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)):
        """URDF-style origin: fixed-axis roll, pitch, yaw (``Rz @ Ry @ Rx``)."""
        r, p, y = (float(v) for v in rpy)
        rot = (kernels.axis_angle((0.0, 0.0, 1.0), y)
               @ kernels.axis_angle((0.0, 1.0, 0.0), p)
               @ kernels.axis_angle((1.0, 0.0, 0.0), r))
        return cls(rot, np.asarray(xyz, dtype=float))

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other):
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def transform_point(T, p):
    """``R @ p + t``."""
    return T.rotation @ np.asarray(p, dtype=float) + T.translation


@dataclass(frozen=True)
class Joint:
    name: str
    parent_index: int
    fixed_offset: RigidTransform
    rotation_axis: np.ndarray
    angle_limits: tuple
    velocity_limit: float


@dataclass(frozen=True)
class EndEffector:
    name: str
    joint_index: int
    offset: RigidTransform


@dataclass(frozen=True)
class CollisionSphere:
    joint_index: int
    local_center: np.ndarray
    radius: float


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class KinematicChain:
    """Immutable joint tree plus the packed arrays the kernels consume."""

    joints: tuple
    end_effectors: dict
    collision_spheres: tuple = ()
    _arrays: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.joints:
            raise ConfigError("chain needs at least one joint")
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate joint names")
        for i, j in enumerate(self.joints):
            if not -1 <= j.parent_index < i:
                raise ConfigError(f"joint {j.name!r}: parent index {j.parent_index} must precede it")
            if abs(np.linalg.norm(j.rotation_axis) - 1.0) > AXIS_TOL:
                raise ConfigError(f"joint {j.name!r}: rotation axis is not unit length")
            lo, hi = j.angle_limits
            if not lo < hi:
                raise ConfigError(f"joint {j.name!r}: limits need lo < hi, got [{lo}, {hi}]")
            if not j.velocity_limit > 0:
                raise ConfigError(f"joint {j.name!r}: velocity limit must be positive")
        for ee in self.end_effectors.values():
            if not 0 <= ee.joint_index < len(self.joints):
                raise ConfigError(f"end effector {ee.name!r} anchored to missing joint")
            if ee.name in names:
                raise ConfigError(f"end effector {ee.name!r} shadows a joint name")
        for s in self.collision_spheres:
            if not 0 <= s.joint_index < len(self.joints) or s.radius <= 0:
                raise ConfigError("collision sphere needs a valid joint and positive radius")

        parents = np.array([j.parent_index for j in self.joints], dtype=np.int64)
        pair_a, pair_b = [], []
        spheres = self.collision_spheres
        for a in range(len(spheres)):
            for b in range(a + 1, len(spheres)):
                ja, jb = spheres[a].joint_index, spheres[b].joint_index
                if ja == jb or parents[ja] == jb or parents[jb] == ja:
                    continue
                pair_a.append(a)
                pair_b.append(b)
        arrays = dict(
            parents=_frozen(parents, np.int64),
            off_rot=_frozen([j.fixed_offset.rotation for j in self.joints]),
            off_trans=_frozen([j.fixed_offset.translation for j in self.joints]),
            axes=_frozen([j.rotation_axis for j in self.joints]),
            lo=_frozen([j.angle_limits[0] for j in self.joints]),
            hi=_frozen([j.angle_limits[1] for j in self.joints]),
            vmax=_frozen([j.velocity_limit for j in self.joints]),
            sphere_joint=_frozen([s.joint_index for s in spheres], np.int64).reshape(-1),
            sphere_local=_frozen([s.local_center for s in spheres]).reshape(-1, 3),
            sphere_radius=_frozen([s.radius for s in spheres]).reshape(-1),
            pair_a=_frozen(pair_a, np.int64),
            pair_b=_frozen(pair_b, np.int64),
        )
        object.__setattr__(self, "_arrays", arrays)

    def __getattr__(self, name):
        arrays = self.__dict__.get("_arrays")
        if arrays is not None and name in arrays:
            return arrays[name]
        raise AttributeError(name)

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def joint_names(self):
        return [j.name for j in self.joints]

    def joint_index(self, name):
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(f"unknown joint {name!r}")

    def ancestors(self, joint_index):
        """Joint indices from ``joint_index`` up to the root, inclusive."""
        path = []
        i = joint_index
        while i >= 0:
            path.append(i)
            i = self.joints[i].parent_index
        return path

    def frame_anchor(self, frame):
        """(joint index, local offset) for any joint or end-effector name."""
        if frame in self.end_effectors:
            ee = self.end_effectors[frame]
            return ee.joint_index, ee.offset
        try:
            return self.joint_index(frame), None
        except KeyError:
            raise KeyError(f"unknown frame {frame!r}") from None


def _transform_from_doc(doc, where):
    if doc is None:
        return RigidTransform.identity()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: offset must be a mapping with xyz/rpy")
    try:
        return RigidTransform.from_xyz_rpy(doc.get("xyz", (0, 0, 0)), doc.get("rpy", (0, 0, 0)))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: bad offset ({exc})") from exc


def load_chain(doc):
    """Build a validated :class:`KinematicChain` from the ``chain`` section.

    ``doc`` may be the whole config (a ``chain`` key is looked up) or the
    chain section itself. Schema::

        joints: [{name, parent: name|null, offset: {xyz, rpy}, axis,
                  limits: [lo, hi], velocity_limit}]
        end_effectors: {name: {joint, offset: {xyz, rpy}}}
        collision_spheres: [{joint, center, radius}]
    """
    if not isinstance(doc, dict):
        raise ConfigError("chain document must be a mapping")
    if "chain" in doc:
        doc = doc["chain"]
    raw_joints = doc.get("joints")
    if not raw_joints:
        raise ConfigError("chain document defines no joints")

    index = {}
    joints = []
    for i, jd in enumerate(raw_joints):
        try:
            name = str(jd["name"])
            parent = jd.get("parent")
            axis = np.asarray(jd["axis"], dtype=float).reshape(3)
            lo, hi = (float(v) for v in jd["limits"])
            vmax = float(jd.get("velocity_limit", 1.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"joint #{i}: malformed entry ({exc!r})") from exc
        if parent is None:
            parent_index = -1
        elif isinstance(parent, int) and not isinstance(parent, bool):
            parent_index = parent
        elif parent in index:
            parent_index = index[parent]
        else:
            raise ConfigError(f"joint {name!r}: dangling parent {parent!r}")
        joints.append(Joint(name, parent_index, _transform_from_doc(jd.get("offset"), f"joint {name!r}"),
                            _frozen(axis), (lo, hi), vmax))
        index[name] = i

    def resolve(ref, where):
        if isinstance(ref, int) and not isinstance(ref, bool) and 0 <= ref < len(joints):
            return ref
        if ref in index:
            return index[ref]
        raise ConfigError(f"{where}: unknown joint {ref!r}")

    ees = {}
    for name, ed in (doc.get("end_effectors") or {}).items():
        if not isinstance(ed, dict) or "joint" not in ed:
            raise ConfigError(f"end effector {name!r}: needs a joint")
        ees[name] = EndEffector(name, resolve(ed["joint"], f"end effector {name!r}"),
                                _transform_from_doc(ed.get("offset"), f"end effector {name!r}"))

    spheres = []
    for k, sd in enumerate(doc.get("collision_spheres") or []):
        try:
            spheres.append(CollisionSphere(resolve(sd["joint"], f"sphere #{k}"),
                                           _frozen(np.asarray(sd["center"], dtype=float).reshape(3)),
                                           float(sd["radius"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"collision sphere #{k}: malformed entry ({exc!r})") from exc
    return KinematicChain(tuple(joints), ees, tuple(spheres))


def _check_q(chain, q):
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n_joints,):
        raise ValueError(f"expected {chain.n_joints} joint angles, got shape {q.shape}")
    return np.ascontiguousarray(q)


def joint_poses(chain, q):
    """World rotations ``(n, 3, 3)`` and origins ``(n, 3)`` of every joint frame."""
    q = _check_q(chain, q)
    return kernels.fk(chain.parents, chain.off_rot, chain.off_trans, chain.axes, q)


def frame_position(chain, rot_w, pos_w, frame):
    j, offset = chain.frame_anchor(frame)
    if offset is None:
        return pos_w[j].copy()
    return rot_w[j] @ offset.translation + pos_w[j]


def forward_kinematics(chain, q):
    """Pose of every joint frame and end effector, keyed by name."""
    rot_w, pos_w = joint_poses(chain, q)
    poses = {}
    for i, j in enumerate(chain.joints):
        poses[j.name] = RigidTransform(rot_w[i], pos_w[i])
    for name, ee in chain.end_effectors.items():
        poses[name] = poses[chain.joints[ee.joint_index].name] @ ee.offset
    return poses


def jacobian(chain, q, frame):
    """3 x n positional Jacobian (m/rad) of ``frame``'s origin."""
    j, _ = chain.frame_anchor(frame)
    rot_w, pos_w = joint_poses(chain, q)
    point = frame_position(chain, rot_w, pos_w, frame)
    on_path = np.zeros(chain.n_joints, dtype=np.bool_)
    on_path[chain.ancestors(j)] = True
    return kernels.jacobian_columns(rot_w, pos_w, chain.axes, on_path, point)


def head_direction(chain, q, head_frame="head"):
    """Forward (+x) axis of the head frame in base coordinates, unit length."""
    rot_w, pos_w = joint_poses(chain, q)
    j, offset = chain.frame_anchor(head_frame)
    rot = rot_w[j] if offset is None else rot_w[j] @ offset.rotation
    d = rot[:, 0]
    return d / np.linalg.norm(d)


def check_self_collision(chain, q):
    """True iff two spheres on non-adjacent joints overlap."""
    if chain.pair_a.shape[0] == 0:
        return False
    rot_w, pos_w = joint_poses(chain, q)
    return bool(kernels.spheres_overlap(rot_w, pos_w, chain.sphere_joint, chain.sphere_local,
                                        chain.sphere_radius, chain.pair_a, chain.pair_b))


def default_chain():
    from .config import default_config

    return load_chain(default_config())


def random_configuration(chain, rng, margin: Optional[float] = 0.0):
    """Uniform joint vector inside the limits (shrunk by ``margin``)."""
    return rng.uniform(chain.lo + margin, chain.hi - margin)
