"""Shared test oracles: central finite differences and error measures."""

from __future__ import annotations

from typing import Callable

import numpy as np

from fxdistill.autodiff import Tensor

Array = np.ndarray


def central_diff(f: Callable[[], float], params: list[Tensor], h: float = 1e-5) -> list[Array]:
    """Per-element central differences of a scalar function of the params.

    f must re-evaluate the loss from scratch using the current param values
    (any stochastic draws inside must be frozen by the caller).
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(analytic: list[Array], numeric: list[Array]) -> float:
    """Worst per-parameter relative error, scaled by the FD gradient size."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(float(np.abs(n).max()), 1e-8)
        worst = max(worst, float(np.abs(a - n).max()) / scale)
    return worst


def collect_grads(params: list[Tensor]) -> list[Array]:
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def perturb_params(params: list[Tensor], rng, scale: float = 0.1) -> None:
    """Add small noise in place so zero-initialized adapters act nontrivially."""
    for p in params:
        p.data += scale * rng.normal(p.data.shape)


def distill_gradient_errors(seed: int = 0) -> tuple[dict[str, float], dict[str, int]]:
    """Finite-difference relative error for every training loss, on tiny nets.

    Plain flow matching is differenced end to end. The distribution-matching
    surrogates are stop-gradient losses, so their FD functions freeze the
    regression target (and, for the rollout term, the pre-final simulation
    state) at the unperturbed parameters and replay the loss's own rng draw
    order; value equality at the center point guards the replay. Returns
    (relative errors, trainable parameter counts) keyed by loss name.
    """
    from fxdistill.autodiff import no_grad
    from fxdistill.distill import (TrainConfig, U_C_MAX, U_C_MIN, U_GEN_MIN,
                                   _init_state, paired_fm_loss,
                                   rollout_dmd_loss, score_direction,
                                   target_sim_dmd_loss)
    from fxdistill.flow import (backward_simulate, fm_loss, interpolate,
                                target_simulate)
    from fxdistill.lora import LoraAdapter, merge
    from fxdistill.nets import VectorFieldNet
    from fxdistill.rng import Rng

    cfg = TrainConfig(seed=seed, hidden=4, depth=2, trigger_dim=2,
                      descriptor_dim=2, rank=2, batch=3, schedule=(1.0, 0.5))
    rng = Rng(seed).substream("gradcheck")
    base = VectorFieldNet.create(rng.substream("base"), prompt_dim=cfg.prompt_dim,
                                 hidden=cfg.hidden, n_hidden=cfg.depth)
    state = _init_state(base, cfg, rng.substream("state"))
    teacher = LoraAdapter.create(base, rng.substream("teacher"), cfg.rank,
                                 cfg.alpha, name="effect_00")
    for adapter in (state.student, state.critic_adapter, teacher):
        perturb_params(adapter.parameters(), rng.substream("jitter", adapter.name))
    real_net = merge(base, teacher)
    real_net.set_trainable(False)

    n = cfg.batch
    x_src = rng.normal((n, 2))
    y = x_src + 0.5 * rng.normal((n, 2))
    cs = rng.normal((cfg.prompt_dim,))
    ct = rng.normal((cfg.prompt_dim,))
    errors: dict[str, float] = {}
    counts: dict[str, int] = {}

    def check(name, build_loss, fd_fn, params):
        value = float(build_loss().data)
        assert abs(value - fd_fn()) < 1e-10, f"{name}: replay drifted from loss"
        for p in params:
            p.zero_grad()
        build_loss().backward()
        analytic = collect_grads(params)
        numeric = central_diff(fd_fn, params)
        errors[name] = rel_err(analytic, numeric)
        counts[name] = sum(p.data.size for p in params)
        for p in params:
            p.zero_grad()

    # Plain flow matching, end to end over the full base net.
    u = rng.uniform(0.0, 1.0, n)
    eps = rng.normal((n, 2))
    base.set_trainable(True)
    check("fm", lambda: fm_loss(base, y, x_src, ct, u, eps),
          lambda: float(fm_loss(base, y, x_src, ct, u, eps).data),
          base.parameters())
    base.set_trainable(False)

    stu = state.student.parameters()

    def paired_fd():
        return float(paired_fm_loss(state, y, x_src, cs, Rng(101)).data)

    check("paired_fm", lambda: paired_fm_loss(state, y, x_src, cs, Rng(101)),
          paired_fd, stu)

    # Target-simulated branch: one taped denoise from a noised real target.
    r = Rng(202)
    u_gen = r.uniform(U_GEN_MIN, cfg.tau_max, n)
    with no_grad():
        y_hat0 = target_simulate(state.generator, y, x_src, cs, u_gen, r)
    u_c = r.uniform(cfg.tau_min, U_C_MAX, n)
    eps_c = r.normal((n, 2))
    ts_target, _ = score_direction(y_hat0.data, x_src, cs, ct, real_net,
                                   state.critic, u_c, eps_c)

    def ts_fd():
        rr = Rng(202)
        ug = rr.uniform(U_GEN_MIN, cfg.tau_max, n)
        with no_grad():
            yh = target_simulate(state.generator, y, x_src, cs, ug, rr)
        d = yh.data - ts_target
        return 0.5 * float((d * d).sum()) / n

    check("target_sim",
          lambda: target_sim_dmd_loss(state, y, x_src, cs, ct, real_net, Rng(202)),
          ts_fd, stu)

    # Rollout branch: gradients enter only through the final denoise, so the
    # FD function freezes everything upstream of it.
    r = Rng(303)
    sim = backward_simulate(state.generator, state.schedule, x_src, cs, r)
    u_c = r.uniform(U_C_MIN, U_C_MAX, n)
    eps_c = r.normal((n, 2))
    bs_target, _ = score_direction(sim.x_g.data, x_src, cs, ct, real_net,
                                   state.critic, u_c, eps_c)
    fr = state.schedule.fractions
    x_in = sim.noises[0]
    with no_grad():
        for k in range(sim.stop_index - 1):
            x0 = x_in + fr[k] * state.generator(x_in, fr[k], x_src, cs).data
            x_in = interpolate(x0, sim.noises[k + 1], fr[k + 1])
    u_fin = fr[sim.stop_index - 1]

    def bs_fd():
        with no_grad():
            v = state.generator(x_in, u_fin, x_src, cs).data
        d = (x_in + u_fin * v) - bs_target
        return 0.5 * float((d * d).sum()) / n

    check("rollout",
          lambda: rollout_dmd_loss(state, x_src, cs, ct, real_net, Rng(303)),
          bs_fd, stu)

    # Weighted composite; distinct weights expose any mis-routed term.
    w1, w2, w3 = 0.7, 1.3, 0.9
    check("composite",
          lambda: (paired_fm_loss(state, y, x_src, cs, Rng(101)) * w1
                   + target_sim_dmd_loss(state, y, x_src, cs, ct, real_net,
                                         Rng(202)) * w2
                   + rollout_dmd_loss(state, x_src, cs, ct, real_net,
                                      Rng(303)) * w3),
          lambda: w1 * paired_fd() + w2 * ts_fd() + w3 * bs_fd(), stu)

    return errors, counts
