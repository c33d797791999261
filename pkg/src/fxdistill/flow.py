"""Flow-matching operations on the noise axis u in [0, 1].

Convention: u = 0 is clean data, u = 1 is pure noise, and states mix as
x_u = (1 - u) * y + u * eps. The regression target for the velocity net is
y - eps, so a perfect net inverts any state exactly via
x_u + u * (y - eps) = y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ConfigError
from .rng import Rng

Array = np.ndarray


@dataclass(frozen=True)
class Schedule:
    """Ordered noise fractions for few-step sampling, starting at pure noise."""

    fractions: tuple[float, ...] = (1.0, 0.75, 0.5, 0.25)

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if not fr:
            raise ConfigError("schedule must have at least one step")
        if fr[0] != 1.0:
            raise ConfigError("schedule must start at noise fraction 1.0")
        if any(not (0.0 < f <= 1.0) for f in fr):
            raise ConfigError("noise fractions must lie in (0, 1]")
        if any(a <= b for a, b in zip(fr, fr[1:])):
            raise ConfigError("noise fractions must be strictly decreasing")

    @property
    def n_steps(self) -> int:
        return len(self.fractions)


@dataclass
class SimResult:
    """Output of one backward-simulation rollout."""

    x_g: Tensor
    stop_index: int
    noises: list[Array] = field(default_factory=list)


def _col(u, n: int) -> Array:
    """Broadcast a scalar or (n,) array of noise fractions to an (n, 1) column."""
    return np.broadcast_to(np.asarray(u, dtype=np.float64), (n,)).reshape(n, 1)


def interpolate(y: Array, eps: Array, u) -> Array:
    """Mix clean points with noise: (1 - u) * y + u * eps."""
    y = np.asarray(y, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if y.shape != eps.shape:
        raise ConfigError(f"y shape {y.shape} != eps shape {eps.shape}")
    uc = _col(u, y.shape[0])
    return (1.0 - uc) * y + uc * eps


def denoise_estimate(x_u: Array, u, v):
    """Clean-point estimate x_u + u * v; exact when v is the true velocity."""
    n = np.asarray(x_u).shape[0]
    uc = _col(u, n)
    if isinstance(v, Tensor):
        return Tensor(x_u) + Tensor(uc) * v
    return np.asarray(x_u, dtype=np.float64) + uc * v


def fm_loss(net, y: Array, x_src: Array, c, u, eps: Array) -> Tensor:
    """Velocity regression: mean squared norm of v(x_u, ...) - (y - eps)."""
    x_u = interpolate(y, eps, u)
    v = net(x_u, u, x_src, c)
    diff = v - (np.asarray(y, dtype=np.float64) - np.asarray(eps, dtype=np.float64))
    n = y.shape[0]
    return (diff * diff).sum() / n


def euler_sample(net, x_src: Array, c, steps: int, rng: Rng) -> Array:
    """Integrate dx/du = -v from u=1 (noise) to u=0 on a uniform grid."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    n = x_src.shape[0]
    x = rng.normal((n, 2))
    du = 1.0 / steps
    with no_grad():
        for k in range(steps):
            u = 1.0 - k * du
            v = net(x, u, x_src, c)
            x = x + du * v.data
    return x


def backward_simulate(net, schedule: Schedule, x_src: Array, c, rng: Rng,
                      stop_index: int | None = None) -> SimResult:
    """Iterated denoise / re-noise rollout from pure noise.

    The state starts as z ~ N(0, I) at the first fraction. Each step denoises
    to a clean estimate and, unless it is the stop step, re-noises the
    detached estimate with fresh noise at the next fraction. Gradients flow
    only through the final denoise.
    """
    k_max = schedule.n_steps
    if stop_index is None:
        stop_index = int(rng.integers(1, k_max + 1))
    if not 1 <= stop_index <= k_max:
        raise ConfigError(f"stop_index {stop_index} outside [1, {k_max}]")
    n = x_src.shape[0]
    z = rng.normal((n, 2))
    noises = [z]
    x = z
    for k in range(stop_index - 1):
        u = schedule.fractions[k]
        with no_grad():
            v = net(x, u, x_src, c)
            x0 = denoise_estimate(x, u, v)
            x0 = x0.data if isinstance(x0, Tensor) else x0
        eps = rng.normal((n, 2))
        noises.append(eps)
        x = interpolate(x0, eps, schedule.fractions[k + 1])
    u = schedule.fractions[stop_index - 1]
    v = net(x, u, x_src, c)
    x_g = denoise_estimate(x, u, v)
    if not isinstance(x_g, Tensor):
        x_g = Tensor(x_g)
    return SimResult(x_g=x_g, stop_index=stop_index, noises=noises)


def target_simulate(net, y: Array, x_src: Array, c, u_gen, rng: Rng):
    """Noise real targets to u_gen and denoise once with the given net."""
    u_arr = np.asarray(u_gen, dtype=np.float64)
    if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
        raise ConfigError("u_gen must lie strictly inside (0, 1)")
    eps = rng.normal(y.shape)
    y_u = interpolate(y, eps, u_gen)
    v = net(y_u, u_gen, x_src, c)
    return denoise_estimate(y_u, u_gen, v)


def fewstep_sample(net, schedule: Schedule, x_src: Array, c, rng: Rng) -> Array:
    """Deployment sampler: run the full backward simulation, no gradients."""
    with no_grad():
        sim = backward_simulate(net, schedule, x_src, c, rng,
                                stop_index=schedule.n_steps)
    return sim.x_g.data
