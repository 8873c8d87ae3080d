"""Hot numeric kernels.

Every kernel exists twice: an explicit-loop version compiled with numba and a
pure-numpy version. The public names (``fk``, ``jacobian_columns``,
``spheres_overlap``, ``gae``) point at the numba build unless numba is missing
or ``REACHRL_DISABLE_NUMBA`` is set. Both paths agree to ~1e-15; they are not
guaranteed to be bit-identical to each other, only each to itself.
"""
import math

import numpy as np

from ._accel import HAVE_NUMBA, njit

# ---------------------------------------------------------------------------
# loop versions (numba)
# ---------------------------------------------------------------------------


def _axis_angle_loop(axis, angle, out):
    c = math.cos(angle)
    s = math.sin(angle)
    t = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    out[0, 0] = t * x * x + c
    out[0, 1] = t * x * y - s * z
    out[0, 2] = t * x * z + s * y
    out[1, 0] = t * x * y + s * z
    out[1, 1] = t * y * y + c
    out[1, 2] = t * y * z - s * x
    out[2, 0] = t * x * z - s * y
    out[2, 1] = t * y * z + s * x
    out[2, 2] = t * z * z + c


def _fk_loop(parents, off_rot, off_trans, axes, q):
    n = q.shape[0]
    rot_w = np.empty((n, 3, 3))
    pos_w = np.empty((n, 3))
    local = np.empty((3, 3))
    a = np.empty((3, 3))
    for i in range(n):
        _axis_angle_loop(axes[i], q[i], local)
        # a = off_rot[i] @ local
        for r in range(3):
            for c in range(3):
                a[r, c] = (off_rot[i, r, 0] * local[0, c]
                           + off_rot[i, r, 1] * local[1, c]
                           + off_rot[i, r, 2] * local[2, c])
        p = parents[i]
        if p < 0:
            for r in range(3):
                pos_w[i, r] = off_trans[i, r]
                for c in range(3):
                    rot_w[i, r, c] = a[r, c]
        else:
            for r in range(3):
                pos_w[i, r] = (rot_w[p, r, 0] * off_trans[i, 0]
                               + rot_w[p, r, 1] * off_trans[i, 1]
                               + rot_w[p, r, 2] * off_trans[i, 2]
                               + pos_w[p, r])
                for c in range(3):
                    rot_w[i, r, c] = (rot_w[p, r, 0] * a[0, c]
                                      + rot_w[p, r, 1] * a[1, c]
                                      + rot_w[p, r, 2] * a[2, c])
    return rot_w, pos_w


def _jacobian_loop(rot_w, pos_w, axes, on_path, point):
    n = pos_w.shape[0]
    jac = np.zeros((3, n))
    for j in range(n):
        if not on_path[j]:
            continue
        wx = rot_w[j, 0, 0] * axes[j, 0] + rot_w[j, 0, 1] * axes[j, 1] + rot_w[j, 0, 2] * axes[j, 2]
        wy = rot_w[j, 1, 0] * axes[j, 0] + rot_w[j, 1, 1] * axes[j, 1] + rot_w[j, 1, 2] * axes[j, 2]
        wz = rot_w[j, 2, 0] * axes[j, 0] + rot_w[j, 2, 1] * axes[j, 1] + rot_w[j, 2, 2] * axes[j, 2]
        dx = point[0] - pos_w[j, 0]
        dy = point[1] - pos_w[j, 1]
        dz = point[2] - pos_w[j, 2]
        jac[0, j] = wy * dz - wz * dy
        jac[1, j] = wz * dx - wx * dz
        jac[2, j] = wx * dy - wy * dx
    return jac


def _spheres_overlap_loop(rot_w, pos_w, sphere_joint, sphere_local, sphere_radius, pair_a, pair_b):
    m = sphere_joint.shape[0]
    centers = np.empty((m, 3))
    for s in range(m):
        j = sphere_joint[s]
        for r in range(3):
            centers[s, r] = (rot_w[j, r, 0] * sphere_local[s, 0]
                             + rot_w[j, r, 1] * sphere_local[s, 1]
                             + rot_w[j, r, 2] * sphere_local[s, 2]
                             + pos_w[j, r])
    for k in range(pair_a.shape[0]):
        i = pair_a[k]
        j = pair_b[k]
        dx = centers[i, 0] - centers[j, 0]
        dy = centers[i, 1] - centers[j, 1]
        dz = centers[i, 2] - centers[j, 2]
        reach = sphere_radius[i] + sphere_radius[j]
        if dx * dx + dy * dy + dz * dz < reach * reach:
            return True
    return False


def _gae_loop(rewards, values, dones, last_value, gamma, lam):
    n_steps, n_envs = rewards.shape
    adv = np.empty((n_steps, n_envs))
    for e in range(n_envs):
        running = 0.0
        next_value = last_value[e]
        for t in range(n_steps - 1, -1, -1):
            live = 1.0 - dones[t, e]
            delta = rewards[t, e] + gamma * next_value * live - values[t, e]
            running = delta + gamma * lam * live * running
            adv[t, e] = running
            next_value = values[t, e]
    return adv


# ---------------------------------------------------------------------------
# numpy versions
# ---------------------------------------------------------------------------


def axis_angle(axis, angle):
    """Rotation matrix for ``angle`` radians about unit ``axis`` (Rodrigues)."""
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def fk_numpy(parents, off_rot, off_trans, axes, q):
    n = q.shape[0]
    rot_w = np.empty((n, 3, 3))
    pos_w = np.empty((n, 3))
    for i in range(n):
        a = off_rot[i] @ axis_angle(axes[i], q[i])
        p = parents[i]
        if p < 0:
            rot_w[i] = a
            pos_w[i] = off_trans[i]
        else:
            rot_w[i] = rot_w[p] @ a
            pos_w[i] = rot_w[p] @ off_trans[i] + pos_w[p]
    return rot_w, pos_w


def jacobian_numpy(rot_w, pos_w, axes, on_path, point):
    world_axes = np.einsum("nij,nj->ni", rot_w, axes)
    jac = np.cross(world_axes, point - pos_w).T
    jac[:, ~on_path] = 0.0
    return np.ascontiguousarray(jac)


def spheres_overlap_numpy(rot_w, pos_w, sphere_joint, sphere_local, sphere_radius, pair_a, pair_b):
    if pair_a.shape[0] == 0:
        return False
    centers = np.einsum("mij,mj->mi", rot_w[sphere_joint], sphere_local) + pos_w[sphere_joint]
    d2 = np.sum((centers[pair_a] - centers[pair_b]) ** 2, axis=1)
    reach = sphere_radius[pair_a] + sphere_radius[pair_b]
    return bool(np.any(d2 < reach * reach))


def gae_numpy(rewards, values, dones, last_value, gamma, lam):
    # The recursion is inherently sequential in t; vectorised over envs only.
    n_steps = rewards.shape[0]
    live = 1.0 - dones
    next_values = np.concatenate([values[1:], last_value[None, :]], axis=0)
    deltas = rewards + gamma * next_values * live - values
    adv = np.empty_like(rewards)
    running = np.zeros(rewards.shape[1])
    for t in range(n_steps - 1, -1, -1):
        running = deltas[t] + gamma * lam * live[t] * running
        adv[t] = running
    return adv


if HAVE_NUMBA:
    _axis_angle_loop = njit(_axis_angle_loop)
    fk_numba = njit(_fk_loop)
    jacobian_numba = njit(_jacobian_loop)
    spheres_overlap_numba = njit(_spheres_overlap_loop)
    gae_numba = njit(_gae_loop)

    fk = fk_numba
    jacobian_columns = jacobian_numba
    spheres_overlap = spheres_overlap_numba
    gae = gae_numba
else:
    fk_numba = jacobian_numba = spheres_overlap_numba = gae_numba = None

    fk = fk_numpy
    jacobian_columns = jacobian_numpy
    spheres_overlap = spheres_overlap_numpy
    gae = gae_numpy

BACKEND = "numba" if HAVE_NUMBA else "numpy"
