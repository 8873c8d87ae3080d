"""Damped-least-squares inverse kinematics (position only).

Used as a reachability checker and as a baseline for the learned policy; it
shares nothing with the trainer except the chain model.
"""
from dataclasses import dataclass

import numpy as np

from .chain import frame_position, joint_poses
from . import kernels


@dataclass(frozen=True)
class IKParams:
    damping: float = 0.05
    max_iters: int = 200
    tolerance: float = 1e-3
    step_clamp: float = 0.2

    def __post_init__(self):
        if self.damping <= 0 or self.tolerance <= 0:
            raise ValueError("damping and tolerance must be positive")

    @classmethod
    def from_doc(cls, doc):
        if "ik" in doc:
            doc = doc["ik"]
        return cls(float(doc.get("damping", 0.05)), int(doc.get("max_iters", 200)),
                   float(doc.get("tolerance", 1e-3)), float(doc.get("step_clamp", 0.2)))


@dataclass(frozen=True)
class IKResult:
    q: np.ndarray
    residual: float
    converged: bool
    iterations: int


def solve_ik(chain, target, q0, params=IKParams(), frame="right_hand", joints=None):
    """Move ``frame``'s origin to ``target`` by DLS iterations from ``q0``.

    Each iteration takes ``dq = J^T (J J^T + d^2 I)^-1 e`` over the frame's
    ancestor joints (or ``joints`` if given), clamps every component to
    ``step_clamp`` and projects onto the joint limits. ``d^2`` is
    ``damping^2 * min(1, |e| / 1 m)`` so the damping fades out near the
    solution; a fixed damping stalls at ~1e-5 m on stretched-out arms. The best iterate seen is
    returned; non-convergence is reported, not raised.
    """
    target = np.asarray(target, dtype=float).reshape(3)
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")
    q = np.clip(np.asarray(q0, dtype=float).copy(), chain.lo, chain.hi)
    anchor, _ = chain.frame_anchor(frame)
    if joints is None:
        joints = sorted(chain.ancestors(anchor))
    active = np.zeros(chain.n_joints, dtype=np.bool_)
    active[list(joints)] = True
    cols = np.flatnonzero(active)
    d2 = params.damping ** 2

    best_q = q.copy()
    best_res = np.inf
    it = 0
    while True:
        rot_w, pos_w = joint_poses(chain, q)
        p = frame_position(chain, rot_w, pos_w, frame)
        err = target - p
        res = float(np.linalg.norm(err))
        if res < best_res:
            best_res, best_q = res, q.copy()
        if best_res <= params.tolerance or it >= params.max_iters:
            break
        jac = kernels.jacobian_columns(rot_w, pos_w, chain.axes, active, p)[:, cols]
        damp = d2 * min(1.0, res)
        dq = jac.T @ np.linalg.solve(jac @ jac.T + damp * np.eye(3), err)
        q[cols] += np.clip(dq, -params.step_clamp, params.step_clamp)
        np.clip(q, chain.lo, chain.hi, out=q)
        it += 1
    return IKResult(best_q, best_res, best_res <= params.tolerance, it)
