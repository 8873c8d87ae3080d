import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachrl.policy import (
    LOG_STD_INIT,
    Batch,
    CheckpointError,
    LossSpec,
    NonFiniteError,
    actor_critic_forward,
    clipped_surrogate,
    gaussian_entropy,
    gaussian_log_prob,
    gradients,
    init_policy,
    load_checkpoint,
    ppo_loss,
    save_checkpoint,
)

from oracles import fd_gradient, gradient_error, random_problem


def test_init_shapes_and_defaults():
    p = init_policy(0)
    assert p["actor.W0"].shape == (18, 64) and p["actor.W2"].shape == (64, 6)
    assert p["critic.W2"].shape == (64, 1)
    assert np.all(p["log_std"] == LOG_STD_INIT)
    assert np.all(np.isfinite(p.flat))


def test_init_seeding():
    assert np.array_equal(init_policy(3).flat, init_policy(3).flat)
    assert not np.array_equal(init_policy(3).flat, init_policy(4).flat)


def test_hidden_weights_orthogonal():
    w = init_policy(0)["actor.W1"]
    assert np.allclose(w.T @ w, 2.0 * np.eye(64), atol=1e-10)


def test_zero_params_give_zero_outputs():
    p = init_policy(0).zeros_like()
    mean, std, value = actor_critic_forward(p, np.ones((4, 18)))
    assert np.array_equal(mean, np.zeros((4, 6))) and np.array_equal(value, np.zeros(4))
    assert np.allclose(std, 1.0)


def test_forward_is_pure():
    p = init_policy(1)
    obs = np.random.default_rng(0).uniform(-1, 1, (5, 18))
    before = p.flat.copy()
    a = actor_critic_forward(p, obs)
    b = actor_critic_forward(p, obs)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.array_equal(before, p.flat)


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        actor_critic_forward(init_policy(0), np.zeros(17))


def test_log_prob_closed_forms():
    assert gaussian_log_prob([0.0], [1.0], [0.0]) == pytest.approx(-0.9189385, abs=1e-6)
    assert gaussian_log_prob(np.zeros(6), np.ones(6), np.zeros(6)) == pytest.approx(-6 * 0.9189385, abs=1e-6)


def test_entropy_closed_forms():
    assert gaussian_entropy([1.0]) == pytest.approx(1.4189385, abs=1e-6)
    std = np.array([0.3, 0.7, 1.1])
    assert gaussian_entropy(2 * std) - gaussian_entropy(std) == pytest.approx(3 * math.log(2), abs=1e-12)


@settings(max_examples=25)
@given(st.floats(-2, 2), st.floats(0.1, 3))
def test_density_integrates_to_one(mu, sigma):
    x = np.linspace(mu - 12 * sigma, mu + 12 * sigma, 20001)
    p = np.exp(gaussian_log_prob(np.full((x.size, 1), mu), np.full((x.size, 1), sigma), x[:, None]))
    assert np.sum(p) * (x[1] - x[0]) == pytest.approx(1.0, abs=1e-9)


def test_surrogate_examples():
    assert clipped_surrogate(np.array([1.5]), np.array([1.0]), 0.2)[0] == pytest.approx(1.2)
    assert clipped_surrogate(np.array([0.5]), np.array([-1.0]), 0.2)[0] == pytest.approx(-0.8)


def test_gradients_match_finite_differences_small_net():
    params, batch, spec = random_problem(0)
    _, grads, _ = gradients(params, spec, batch)
    rel, tiny = gradient_error(grads.flat, fd_gradient(params, batch, spec))
    assert rel < 1e-4 and tiny < 1e-8


def test_gradients_match_finite_differences_full_width_sample():
    params, batch, spec = random_problem(1, hidden=(64, 64))
    _, grads, _ = gradients(params, spec, batch)
    idx = np.random.default_rng(0).choice(params.flat.size, 300, replace=False)
    h = 1e-5
    probe = params.flat.copy()
    fd = []
    for i in idx:
        probe[i] += h
        plus = ppo_loss(params.replace(probe), batch, spec)[0]
        probe[i] -= 2 * h
        minus = ppo_loss(params.replace(probe), batch, spec)[0]
        probe[i] += h
        fd.append((plus - minus) / (2 * h))
    rel, tiny = gradient_error(grads.flat[idx], np.array(fd))
    assert rel < 1e-4 and tiny < 1e-8


def test_gradient_is_linear_in_scale():
    params, batch, spec = random_problem(2)
    _, g1, _ = gradients(params, spec, batch)
    scaled = LossSpec(spec.clip_eps, spec.policy_coef, spec.value_coef, spec.entropy_coef, scale=3.5)
    _, g2, _ = gradients(params, scaled, batch)
    assert np.allclose(g2.flat, 3.5 * g1.flat, rtol=1e-12, atol=1e-15)


def test_zero_advantage_leaves_actor_mean_untouched():
    params, batch, _ = random_problem(3)
    mean, std, _ = actor_critic_forward(params, batch.obs)
    batch = Batch(batch.obs, batch.actions, gaussian_log_prob(mean, std, batch.actions),
                  np.zeros(len(batch)), batch.returns)
    _, grads, _ = gradients(params, LossSpec(entropy_coef=0.0), batch)
    for name in params.names():
        if name.startswith("actor."):
            assert np.all(grads[name] == 0.0), name
    assert np.all(grads["log_std"] == 0.0)


def test_identical_policy_has_zero_kl():
    params, batch, spec = random_problem(4)
    mean, std, _ = actor_critic_forward(params, batch.obs)
    batch = Batch(batch.obs, batch.actions, gaussian_log_prob(mean, std, batch.actions),
                  batch.advantages, batch.returns)
    _, diag = ppo_loss(params, batch, LossSpec(value_coef=0.0, entropy_coef=0.0))
    assert abs(diag["approx_kl"]) < 1e-9 and diag["clip_frac"] == 0.0
    assert diag["pi_loss"] == pytest.approx(-np.mean(batch.advantages), abs=1e-12)


def test_non_finite_ratio_names_the_sample():
    params, batch, spec = random_problem(5)
    batch.logp_old[3] = -1e6
    with pytest.raises(NonFiniteError, match="sample 3"):
        ppo_loss(params, batch, spec)


def test_checkpoint_round_trip(tmp_path):
    p = init_policy(8)
    save_checkpoint(p, tmp_path / "p.ckpt")
    q = load_checkpoint(tmp_path / "p.ckpt")
    assert q.layout == p.layout
    assert np.array_equal(q.flat, p.flat)
    assert [f.name for f in tmp_path.iterdir()] == ["p.ckpt"]


def test_checkpoint_round_trip_custom_widths(tmp_path):
    p = init_policy(2, hidden=(5, 7, 3))
    save_checkpoint(p, tmp_path / "p.ckpt")
    assert np.array_equal(load_checkpoint(tmp_path / "p.ckpt").flat, p.flat)


@pytest.mark.parametrize("payload", [b"", b"garbage\n", b"REACHRL-POLICY 9\n{}\n"])
def test_checkpoint_rejects_bad_files(tmp_path, payload):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(payload)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    save_checkpoint(init_policy(0), tmp_path / "p.ckpt")
    data = (tmp_path / "p.ckpt").read_bytes()
    (tmp_path / "p.ckpt").write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="bytes"):
        load_checkpoint(tmp_path / "p.ckpt")
