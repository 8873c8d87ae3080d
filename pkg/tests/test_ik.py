import numpy as np
import pytest

from reachrl.chain import forward_kinematics, random_configuration
from reachrl.ik import IKParams, solve_ik


def fk_hand(chain, q):
    return forward_kinematics(chain, q)["right_hand"].translation


def round_trip(chain, seed):
    q_star = random_configuration(chain, np.random.default_rng(seed))
    return solve_ik(chain, fk_hand(chain, q_star), np.zeros(chain.n_joints))


def test_round_trip_rate(chain):
    results = [round_trip(chain, s) for s in range(100)]
    good = sum(r.converged and r.residual < 1e-3 and r.iterations <= 200 for r in results)
    assert good >= 95


def test_planar_stretched_solution(planar):
    res = solve_ik(planar, (2.0, 0.0, 0.0), (0.1, 0.1), IKParams(tolerance=1e-9), frame="tip")
    assert res.residual < 1e-6
    assert np.allclose(res.q, (0.0, 0.0), atol=1e-3)


def test_unreachable_target(planar):
    res = solve_ik(planar, (10.0, 0.0, 0.0), (0.1, 0.1), frame="tip")
    assert not res.converged
    assert res.residual == pytest.approx(10.0 - 2.0, abs=0.05)


def test_far_target_default_chain(chain):
    res = solve_ik(chain, (10.0, 0.0, 0.8), np.zeros(6))
    assert not res.converged and res.residual > 8.0


@pytest.mark.parametrize("seed", range(20))
def test_invariants(chain, seed):
    rng = np.random.default_rng(seed)
    target = rng.uniform((0.0, -0.8, 0.2), (1.2, 0.8, 1.5))
    q0 = random_configuration(chain, rng)
    res = solve_ik(chain, target, q0)
    assert np.all(res.q >= chain.lo) and np.all(res.q <= chain.hi)
    assert res.residual <= np.linalg.norm(target - fk_hand(chain, q0)) + 1e-12
    assert res.residual == pytest.approx(np.linalg.norm(target - fk_hand(chain, res.q)), abs=1e-12)
    assert (res.residual <= 1e-3) == res.converged
    # only the arm and hip move; the head is not an ancestor of the hand
    assert np.array_equal(res.q[4:], q0[4:])


def test_best_iterate_is_returned(chain):
    params = IKParams(max_iters=3)
    res = solve_ik(chain, (0.8, 0.6, 0.8), np.zeros(6), params)
    traj = []
    q = np.zeros(6)
    for n in range(4):
        traj.append(solve_ik(chain, (0.8, 0.6, 0.8), q, IKParams(max_iters=n)).residual)
    assert res.residual == min(traj)


def test_params_validation():
    with pytest.raises(ValueError):
        IKParams(damping=0.0)
    with pytest.raises(ValueError):
        IKParams(tolerance=-1.0)
