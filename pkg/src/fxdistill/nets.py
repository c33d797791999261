"""Conditional velocity-field MLP.

The network predicts a 2-D velocity v(x_u, u, x_src, c): current point,
time features of the noise fraction u, the source point being edited, and a
prompt embedding, all concatenated into one input row per sample.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, linear, silu, tanh
from .errors import ConfigError
from .rng import Rng

Array = np.ndarray

SPACE_DIM = 2
TIME_FEATURES = 3

_ACTIVATIONS = {"silu": silu, "tanh": tanh}


def time_features(u, n: int) -> Array:
    """Stack (u, sin 2*pi*u, cos 2*pi*u) rows for a batch of size n."""
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), (n,))
    return np.stack([u, np.sin(2.0 * np.pi * u), np.cos(2.0 * np.pi * u)], axis=1)


def assemble_input(x_u: Array, u, x_src: Array, c, prompt_dim: int) -> Array:
    """Build the (n, 2 + 3 + 2 + prompt_dim) input block, validating widths."""
    x_u = np.asarray(x_u, dtype=np.float64)
    x_src = np.asarray(x_src, dtype=np.float64)
    if x_u.ndim != 2 or x_u.shape[1] != SPACE_DIM:
        raise ConfigError(f"x_u must be (n, {SPACE_DIM}), got {x_u.shape}")
    if x_src.shape != x_u.shape:
        raise ConfigError(f"x_src shape {x_src.shape} != x_u shape {x_u.shape}")
    n = x_u.shape[0]
    cv = np.asarray(getattr(c, "vector", c), dtype=np.float64)
    if cv.ndim == 1:
        cv = np.broadcast_to(cv, (n, cv.shape[0]))
    if cv.shape != (n, prompt_dim):
        raise ConfigError(f"prompt must have width {prompt_dim}, got {cv.shape}")
    return np.concatenate([x_u, time_features(u, n), x_src, cv], axis=1)


class VectorFieldNet:
    """Fully connected net mapping the assembled input to a 2-D velocity."""

    def __init__(self, weights: list[Tensor], biases: list[Tensor],
                 prompt_dim: int, activation: str = "silu"):
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        if len(weights) != len(biases) or not weights:
            raise ConfigError("weights and biases must be non-empty and aligned")
        expect = SPACE_DIM + TIME_FEATURES + SPACE_DIM + prompt_dim
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.data.ndim != 2 or b.data.ndim != 1 or w.data.shape[0] != b.data.shape[0]:
                raise ConfigError(f"layer {i} has inconsistent shapes")
            if w.data.shape[1] != expect:
                raise ConfigError(
                    f"layer {i} expects input width {w.data.shape[1]}, got {expect}")
            expect = w.data.shape[0]
        if expect != SPACE_DIM:
            raise ConfigError(f"final layer must output width {SPACE_DIM}")
        self.weights = weights
        self.biases = biases
        self.prompt_dim = prompt_dim
        self.activation = activation

    @classmethod
    def create(cls, rng: Rng, prompt_dim: int = 32, hidden: int = 128,
               n_hidden: int = 3, activation: str = "silu") -> "VectorFieldNet":
        """He-scaled random init, zero biases."""
        in_dim = SPACE_DIM + TIME_FEATURES + SPACE_DIM + prompt_dim
        dims = [in_dim] + [hidden] * n_hidden + [SPACE_DIM]
        weights, biases = [], []
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            w = rng.substream("layer", i).normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
            weights.append(Tensor(w))
            biases.append(Tensor(np.zeros(fan_out)))
        return cls(weights, biases, prompt_dim, activation)

    @property
    def in_dim(self) -> int:
        return self.weights[0].data.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [w.data.shape for w in self.weights]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def copy(self) -> "VectorFieldNet":
        return VectorFieldNet(
            [Tensor(w.data.copy()) for w in self.weights],
            [Tensor(b.data.copy()) for b in self.biases],
            self.prompt_dim, self.activation)

    def forward(self, x_u: Array, u, x_src: Array, c) -> Tensor:
        h: Tensor | Array = assemble_input(x_u, u, x_src, c, self.prompt_dim)
        act = _ACTIVATIONS[self.activation]
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = linear(h, w, b)
            if i != last:
                h = act(h)
        return h

    __call__ = forward
