"""Deterministic randomness with labeled substreams.

Every random draw in the package flows from a single root seed. Substreams
are derived by hashing the parent seed together with a label path, so adding
a consumer never perturbs the draws of existing consumers.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError

Array = np.ndarray


class Rng:
    """Seeded generator with counted draws and labeled child streams."""

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        self.seed = seed
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    def substream(self, *labels: object) -> "Rng":
        """Independent child stream addressed by (seed, labels)."""
        if not labels:
            raise ConfigError("substream needs at least one label")
        path = "\x1f".join(str(l) for l in labels)
        digest = hashlib.sha256(f"{self.seed}\x1f{path}".encode()).digest()
        return Rng(int.from_bytes(digest[:8], "big"))

    def normal(self, shape: int | tuple[int, ...] = ()) -> Array:
        self.counter += 1
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape: int | tuple[int, ...] = ()) -> Array:
        self.counter += 1
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape: int | tuple[int, ...] = ()) -> Array:
        """Uniform integers in the half-open range [low, high)."""
        self.counter += 1
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> Array:
        self.counter += 1
        return self._gen.permutation(n)
