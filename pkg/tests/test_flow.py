"""Flow-matching mechanics: interpolation identities, loss worked examples,
samplers against manual re-implementations, and gradient topology."""

import numpy as np
import pytest

from fxdistill.autodiff import Tensor, no_grad
from fxdistill.errors import ConfigError
from fxdistill.flow import (Schedule, backward_simulate, denoise_estimate,
                            euler_sample, fewstep_sample, fm_loss,
                            interpolate, target_simulate)
from fxdistill.nets import SPACE_DIM, TIME_FEATURES, VectorFieldNet
from fxdistill.rng import Rng

PROMPT_DIM = 4
IN_DIM = SPACE_DIM + TIME_FEATURES + SPACE_DIM + PROMPT_DIM


def constant_net(v0):
    """Single-layer net with zero weights: outputs v0 for every input."""
    return VectorFieldNet([Tensor(np.zeros((2, IN_DIM)))],
                          [Tensor(np.asarray(v0, dtype=float))], PROMPT_DIM)


def random_net(seed=0, hidden=6, n_hidden=2):
    return VectorFieldNet.create(Rng(seed), prompt_dim=PROMPT_DIM,
                                 hidden=hidden, n_hidden=n_hidden)


def cond(n=4, seed=1):
    rng = Rng(seed)
    return rng.normal((n, 2)), np.zeros(PROMPT_DIM)


def test_interpolate_endpoints_and_linearity():
    y = np.array([[2.0, -1.0], [0.5, 0.5]])
    eps = np.array([[1.0, 1.0], [-1.0, 2.0]])
    np.testing.assert_array_equal(interpolate(y, eps, 0.0), y)
    np.testing.assert_array_equal(interpolate(y, eps, 1.0), eps)
    np.testing.assert_allclose(interpolate(y, eps, 0.5), (y + eps) / 2)
    per_row = interpolate(y, eps, np.array([0.0, 1.0]))
    np.testing.assert_array_equal(per_row, np.stack([y[0], eps[1]]))


def test_interpolate_shape_mismatch():
    with pytest.raises(ConfigError):
        interpolate(np.zeros((2, 2)), np.zeros((3, 2)), 0.5)


def test_denoise_inverts_interpolate_with_true_velocity():
    rng = Rng(0)
    y = rng.normal((8, 2))
    eps = rng.normal((8, 2))
    for u in [0.05, 0.3, 0.75, 1.0]:
        x_u = interpolate(y, eps, u)
        back = denoise_estimate(x_u, u, y - eps)
        np.testing.assert_allclose(back, y, rtol=0, atol=1e-12)
    us = rng.uniform(0.01, 0.99, 8)
    back = denoise_estimate(interpolate(y, eps, us), us, y - eps)
    np.testing.assert_allclose(back, y, rtol=0, atol=1e-12)


def test_denoise_estimate_handles_tensors():
    x_u = np.array([[1.0, 2.0]])
    v = Tensor(np.array([[0.5, -0.5]]), requires_grad=True)
    out = denoise_estimate(x_u, 0.4, v)
    assert isinstance(out, Tensor)
    np.testing.assert_allclose(out.data, [[1.2, 1.8]])
    out.sum().backward()
    np.testing.assert_allclose(v.grad, [[0.4, 0.4]])


def test_fm_loss_zero_net_unit_target_is_one():
    net = constant_net([0.0, 0.0])
    y = np.array([[1.0, 0.0]])
    eps = np.zeros((1, 2))
    x_src = np.zeros((1, 2))
    c = np.zeros(PROMPT_DIM)
    for u in [0.0, 0.3, 1.0]:
        loss = fm_loss(net, y, x_src, c, u, eps)
        assert loss.item() == pytest.approx(1.0)


def test_fm_loss_matches_direct_formula():
    net = constant_net([0.3, -0.2])
    rng = Rng(4)
    y = rng.normal((6, 2))
    eps = rng.normal((6, 2))
    x_src = rng.normal((6, 2))
    u = rng.uniform(shape=6)
    loss = fm_loss(net, y, x_src, np.zeros(PROMPT_DIM), u, eps)
    want = np.mean(np.sum((np.array([0.3, -0.2]) - (y - eps)) ** 2, axis=1))
    assert loss.item() == pytest.approx(want, rel=1e-12)


def test_fm_loss_zero_for_perfect_prediction():
    y = np.array([[0.3, -0.2], [0.3, -0.2]])
    eps = np.zeros((2, 2))
    net = constant_net([0.3, -0.2])
    loss = fm_loss(net, y, np.zeros((2, 2)), np.zeros(PROMPT_DIM), 0.5, eps)
    assert loss.item() == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("steps", [1, 4, 7])
def test_euler_constant_field_lands_on_noise_plus_velocity(steps):
    v0 = np.array([0.8, -1.1])
    net = constant_net(v0)
    x_src, c = cond(n=5, seed=2)
    rng = Rng(9)
    out = euler_sample(net, x_src, c, steps, rng)
    z = Rng(9).normal((5, 2))
    np.testing.assert_allclose(out, z + v0, rtol=0, atol=1e-12)


def test_euler_matches_manual_integration():
    net = random_net(seed=3)
    x_src, c = cond(n=4, seed=5)
    out = euler_sample(net, x_src, c, 3, Rng(11))
    rng = Rng(11)
    x = rng.normal((4, 2))
    with no_grad():
        for u in (1.0, 1.0 - 1 / 3, 1.0 - 2 / 3):
            x = x + (1 / 3) * net(x, u, x_src, c).data
    np.testing.assert_array_equal(out, x)
    with pytest.raises(ConfigError):
        euler_sample(net, x_src, c, 0, Rng(0))


def test_schedule_validation():
    assert Schedule().n_steps == 4
    assert Schedule((1.0,)).n_steps == 1
    with pytest.raises(ConfigError):
        Schedule(())
    with pytest.raises(ConfigError):
        Schedule((0.9, 0.5))
    with pytest.raises(ConfigError):
        Schedule((1.0, 0.5, 0.5))
    with pytest.raises(ConfigError):
        Schedule((1.0, 0.5, 0.0))


def test_single_step_rollout_is_one_denoise():
    net = random_net(seed=1)
    x_src, c = cond(n=3, seed=7)
    sim = backward_simulate(net, Schedule((1.0,)), x_src, c, Rng(21))
    assert sim.stop_index == 1
    assert len(sim.noises) == 1
    z = Rng(21).normal((3, 2))
    want = z + 1.0 * net(z, 1.0, x_src, c).data
    np.testing.assert_allclose(sim.x_g.data, want, rtol=0, atol=1e-15)


def test_rollout_matches_manual_replay_and_grad_topology():
    net = random_net(seed=6)
    net.set_trainable(True)
    x_src, c = cond(n=3, seed=8)
    sched = Schedule((1.0, 0.75, 0.5, 0.25))
    sim = backward_simulate(net, sched, x_src, c, Rng(33), stop_index=3)
    assert sim.stop_index == 3
    assert len(sim.noises) == 3

    # Manual replay from the recorded noises, final step on the tape.
    x = sim.noises[0]
    with no_grad():
        for k in range(2):
            u = sched.fractions[k]
            x0 = x + u * net(x, u, x_src, c).data
            x = interpolate(x0, sim.noises[k + 1], sched.fractions[k + 1])
    u = sched.fractions[2]
    v = net(x, u, x_src, c)
    want = Tensor(x) + Tensor(np.full((3, 1), u)) * v
    np.testing.assert_array_equal(sim.x_g.data, want.data)

    # Gradients must flow only through the final denoise: replay grads match.
    sim.x_g.sum().backward()
    got = [p.grad.copy() for p in net.parameters()]
    for p in net.parameters():
        p.zero_grad()
    want.sum().backward()
    for g, p in zip(got, net.parameters()):
        np.testing.assert_array_equal(g, p.grad)


def test_rollout_stop_index_draws_cover_range():
    net = constant_net([0.0, 0.0])
    x_src, c = cond(n=1)
    sched = Schedule((1.0, 0.75, 0.5, 0.25))
    rng = Rng(2)
    seen = {backward_simulate(net, sched, x_src, c, rng).stop_index
            for _ in range(200)}
    assert seen == {1, 2, 3, 4}
    with pytest.raises(ConfigError):
        backward_simulate(net, sched, x_src, c, rng, stop_index=0)
    with pytest.raises(ConfigError):
        backward_simulate(net, sched, x_src, c, rng, stop_index=5)


def test_rollout_renoises_with_fresh_draws():
    net = constant_net([0.0, 0.0])
    x_src, c = cond(n=2)
    sim = backward_simulate(net, Schedule((1.0, 0.5)), x_src, c, Rng(4),
                            stop_index=2)
    assert len(sim.noises) == 2
    assert not np.array_equal(sim.noises[0], sim.noises[1])


def test_target_simulate_zero_net_recovers_noised_state():
    net = constant_net([0.0, 0.0])
    rng = Rng(13)
    y = rng.normal((4, 2))
    x_src = rng.normal((4, 2))
    out = target_simulate(net, y, x_src, np.zeros(PROMPT_DIM), 0.6, Rng(40))
    eps = Rng(40).normal((4, 2))
    np.testing.assert_allclose(out.data, interpolate(y, eps, 0.6),
                               rtol=0, atol=1e-15)


def test_target_simulate_perfect_net_would_return_targets():
    # With v = y - eps hard-wired as a constant, a single-row case is exact.
    y = np.array([[1.0, -2.0]])
    eps = Rng(50).normal((1, 2))
    net = constant_net((y - eps)[0])
    out = target_simulate(net, y, np.zeros((1, 2)), np.zeros(PROMPT_DIM),
                          0.35, Rng(50))
    np.testing.assert_allclose(out.data, y, rtol=0, atol=1e-12)


def test_target_simulate_rejects_boundary_noise_levels():
    net = constant_net([0.0, 0.0])
    y = np.zeros((2, 2))
    for bad in [0.0, 1.0, -0.1, 1.1]:
        with pytest.raises(ConfigError):
            target_simulate(net, y, y, np.zeros(PROMPT_DIM), bad, Rng(0))


def test_target_simulate_gradients_flow():
    net = random_net(seed=2)
    net.set_trainable(True)
    rng = Rng(3)
    y = rng.normal((3, 2))
    out = target_simulate(net, y, y, np.zeros(PROMPT_DIM), 0.5, Rng(1))
    out.sum().backward()
    assert all(p.grad is not None for p in net.parameters())


def test_fewstep_sample_is_full_rollout_without_gradients():
    net = random_net(seed=4)
    net.set_trainable(True)
    x_src, c = cond(n=6, seed=9)
    sched = Schedule((1.0, 0.75, 0.5, 0.25))
    out = fewstep_sample(net, sched, x_src, c, Rng(77))
    sim = backward_simulate(net, sched, x_src, c, Rng(77),
                            stop_index=sched.n_steps)
    np.testing.assert_array_equal(out, sim.x_g.data)
    assert isinstance(out, np.ndarray)


def test_samplers_are_seed_deterministic():
    net = random_net(seed=4)
    x_src, c = cond(n=6, seed=9)
    sched = Schedule()
    np.testing.assert_array_equal(
        fewstep_sample(net, sched, x_src, c, Rng(5)),
        fewstep_sample(net, sched, x_src, c, Rng(5)))
    np.testing.assert_array_equal(
        euler_sample(net, x_src, c, 10, Rng(5)),
        euler_sample(net, x_src, c, 10, Rng(5)))
