"""Low-rank adapters over the velocity net's dense weight matrices.

An adapter holds a pair (A, B) per layer; the effective weight is
W + alpha * B @ A. A starts Gaussian with std 1/sqrt(rank), B starts at
zero, so a fresh adapter leaves the base function untouched. Biases are
not adapted.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .autodiff import Tensor, add, linear, matmul, mul
from .errors import ConfigError, RetrievalError, SerializationError
from .modelio import read_record, write_record
from .nets import _ACTIVATIONS, VectorFieldNet, assemble_input
from .rng import Rng

Array = np.ndarray


class LoraAdapter:
    """Per-layer low-rank deltas for one network architecture."""

    def __init__(self, name: str, rank: int, alpha: float,
                 pairs: list[tuple[Tensor, Tensor]]):
        if rank < 1:
            raise ConfigError("rank must be >= 1")
        for i, (a, b) in enumerate(pairs):
            if a.data.ndim != 2 or b.data.ndim != 2:
                raise ConfigError(f"adapter pair {i} must be matrices")
            if a.data.shape[0] != rank or b.data.shape[1] != rank:
                raise ConfigError(f"adapter pair {i} does not match rank {rank}")
        self.name = name
        self.rank = rank
        self.alpha = float(alpha)
        self.pairs = pairs

    @classmethod
    def create(cls, base: VectorFieldNet, rng: Rng, rank: int = 4,
               alpha: float = 1.0, name: str = "adapter") -> "LoraAdapter":
        pairs = []
        for i, (out_dim, in_dim) in enumerate(base.layer_shapes()):
            a = rng.substream("lora_a", i).normal((rank, in_dim)) / np.sqrt(rank)
            pairs.append((Tensor(a), Tensor(np.zeros((out_dim, rank)))))
        return cls(name, rank, alpha, pairs)

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [(b.data.shape[0], a.data.shape[1]) for a, b in self.pairs]

    def deltas(self) -> list[Array]:
        """Dense per-layer weight deltas alpha * B @ A."""
        return [self.alpha * (b.data @ a.data) for a, b in self.pairs]

    def parameters(self) -> list[Tensor]:
        out = []
        for a, b in self.pairs:
            out.extend((a, b))
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def copy(self, name: str | None = None) -> "LoraAdapter":
        pairs = [(Tensor(a.data.copy()), Tensor(b.data.copy())) for a, b in self.pairs]
        return LoraAdapter(name or self.name, self.rank, self.alpha, pairs)


def _check_match(base: VectorFieldNet, adapter: LoraAdapter) -> None:
    if adapter.layer_shapes() != base.layer_shapes():
        raise ConfigError(
            f"adapter {adapter.name!r} shapes {adapter.layer_shapes()} do not "
            f"match base layers {base.layer_shapes()}")


class AdaptedNet:
    """Base net plus one adapter, evaluated without touching base weights."""

    def __init__(self, base: VectorFieldNet, adapter: LoraAdapter):
        _check_match(base, adapter)
        self.base = base
        self.adapter = adapter
        self.prompt_dim = base.prompt_dim

    def forward(self, x_u: Array, u, x_src: Array, c) -> Tensor:
        h = assemble_input(x_u, u, x_src, c, self.base.prompt_dim)
        act = _ACTIVATIONS[self.base.activation]
        last = self.base.n_layers - 1
        alpha = self.adapter.alpha
        ht: Tensor | Array = h
        for i in range(self.base.n_layers):
            w = self.base.weights[i]
            b = self.base.biases[i]
            a_low, b_low = self.adapter.pairs[i]
            delta = matmul(b_low, a_low)
            if alpha != 1.0:
                delta = mul(delta, Tensor(alpha))
            w_eff = add(w, delta)
            ht = linear(ht, w_eff, b)
            if i != last:
                ht = act(ht)
        return ht

    __call__ = forward

    def parameters(self) -> list[Tensor]:
        return self.adapter.parameters()


def attach(base: VectorFieldNet, adapter: LoraAdapter) -> AdaptedNet:
    """Pair the adapter with the base for on-the-fly adapted evaluation."""
    return AdaptedNet(base, adapter)


def merge(base: VectorFieldNet, adapter: LoraAdapter) -> VectorFieldNet:
    """Bake the adapter into a standalone net with W + alpha * B @ A."""
    _check_match(base, adapter)
    weights = [Tensor(w.data + d) for w, d in zip(base.weights, adapter.deltas())]
    biases = [Tensor(b.data.copy()) for b in base.biases]
    return VectorFieldNet(weights, biases, base.prompt_dim, base.activation)


def save_adapter(adapter: LoraAdapter, path: str) -> None:
    meta = {
        "name": adapter.name,
        "rank": adapter.rank,
        "alpha": adapter.alpha,
        "layer_shapes": [list(s) for s in adapter.layer_shapes()],
    }
    tensors: list[tuple[str, Array]] = []
    for i, (a, b) in enumerate(adapter.pairs):
        tensors.append((f"A{i}", a.data))
        tensors.append((f"B{i}", b.data))
    write_record(path, "adapter", meta, tensors)


def load_adapter(path: str) -> LoraAdapter:
    _, meta, tensors = read_record(path, expect_kind="adapter")
    try:
        name = str(meta["name"])
        rank = int(meta["rank"])
        alpha = float(meta["alpha"])
        n = len(meta["layer_shapes"])
    except (KeyError, TypeError, ValueError) as e:
        raise SerializationError(f"{path}: incomplete adapter meta") from e
    named = dict(tensors)
    pairs = []
    for i in range(n):
        try:
            pairs.append((Tensor(named[f"A{i}"]), Tensor(named[f"B{i}"])))
        except KeyError as e:
            raise SerializationError(f"{path}: missing tensor {e.args[0]}") from e
    try:
        return LoraAdapter(name, rank, alpha, pairs)
    except ConfigError as e:
        raise SerializationError(f"{path}: inconsistent adapter record: {e}") from e


class LoraBank:
    """Named adapter collection tied to one base architecture."""

    MANIFEST = "bank.json"

    def __init__(self, base: VectorFieldNet):
        self.base = base
        self._adapters: dict[str, LoraAdapter] = {}

    def register(self, adapter: LoraAdapter, replace: bool = False) -> None:
        _check_match(self.base, adapter)
        if adapter.name in self._adapters and not replace:
            raise ConfigError(f"adapter {adapter.name!r} already registered")
        self._adapters[adapter.name] = adapter

    def retrieve(self, name: str) -> LoraAdapter:
        try:
            return self._adapters[name]
        except KeyError:
            raise RetrievalError(
                f"adapter {name!r} not in bank (have: {sorted(self._adapters)})") from None

    def names(self) -> list[str]:
        return sorted(self._adapters)

    def __len__(self) -> int:
        return len(self._adapters)

    def save_dir(self, dirpath: str) -> None:
        os.makedirs(dirpath, exist_ok=True)
        files = {}
        for name in self.names():
            fname = f"{name}.cfn"
            save_adapter(self._adapters[name], os.path.join(dirpath, fname))
            files[name] = fname
        tmp = os.path.join(dirpath, self.MANIFEST + ".tmp")
        with open(tmp, "w") as fh:
            json.dump({"format": "cfn-v1", "adapters": files}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, os.path.join(dirpath, self.MANIFEST))

    @classmethod
    def load_dir(cls, dirpath: str, base: VectorFieldNet) -> "LoraBank":
        manifest_path = os.path.join(dirpath, cls.MANIFEST)
        try:
            with open(manifest_path) as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise SerializationError(f"cannot read bank manifest {manifest_path}: {e}") from e
        bank = cls(base)
        for name, fname in sorted(manifest.get("adapters", {}).items()):
            adapter = load_adapter(os.path.join(dirpath, fname))
            if adapter.name != name:
                raise SerializationError(
                    f"bank entry {name!r} points at adapter named {adapter.name!r}")
            bank.register(adapter)
        return bank
