"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat N]

The env-step row measures a full ``ReachEnv.step`` under whichever backend
the package picked at import (set ``REACHRL_DISABLE_NUMBA=1`` to compare).
"""
import argparse
import timeit

import numpy as np

from reachrl import kernels
from reachrl.chain import default_chain, random_configuration
from reachrl.env import ReachEnv


def cases(chain, rng):
    q = random_configuration(chain, rng)
    fk_args = (chain.parents, chain.off_rot, chain.off_trans, chain.axes, q)
    rot_w, pos_w = kernels.fk_numpy(*fk_args)
    on_path = np.ones(chain.n_joints, dtype=np.bool_)
    jac_args = (rot_w, pos_w, chain.axes, on_path, pos_w[-1])
    sph_args = (rot_w, pos_w, chain.sphere_joint, chain.sphere_local, chain.sphere_radius, chain.pair_a, chain.pair_b)
    rewards, values = rng.standard_normal((2, 2048, 1))
    dones = (rng.random((2048, 1)) < 0.004).astype(float)
    gae_args = (rewards, values, dones, np.zeros(1), 0.99, 0.95)
    return [
        ("fk", kernels.fk_numpy, kernels.fk_numba, fk_args),
        ("jacobian", kernels.jacobian_numpy, kernels.jacobian_numba, jac_args),
        ("sphere collision", kernels.spheres_overlap_numpy, kernels.spheres_overlap_numba, sph_args),
        ("gae (2048 steps)", kernels.gae_numpy, kernels.gae_numba, gae_args),
    ]


def per_call(fn, args, repeat):
    fn(*args)  # compile / warm caches
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat))
    return best / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    chain = default_chain()
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<18}{'numpy (us)':>12}{'numba (us)':>12}{'speedup':>9}")
    for name, np_fn, nb_fn, fn_args in cases(chain, rng):
        t_np = per_call(np_fn, fn_args, args.repeat) * 1e6
        if nb_fn is None:
            print(f"{name:<18}{t_np:>12.2f}{'n/a':>12}{'':>9}")
            continue
        t_nb = per_call(nb_fn, fn_args, args.repeat) * 1e6
        print(f"{name:<18}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>8.1f}x")

    env = ReachEnv(chain, seed=0)
    env.reset()
    actions = rng.uniform(-1, 1, (250, chain.n_joints))

    def episode():
        env.reset()
        for a in actions:
            env.step(a)

    t = per_call(episode, (), args.repeat) / 250 * 1e6
    print(f"{'env step':<18}{t:>12.2f} us ({kernels.BACKEND})")


if __name__ == "__main__":
    main()
