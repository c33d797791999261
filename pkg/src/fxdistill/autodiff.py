"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape: each Tensor remembers its parent Tensors and a closure that
maps the output gradient to parent gradients. Only the operations the
velocity networks and distillation losses need are implemented. Everything
is float64 so central-difference gradient checks are meaningful.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import UsageError

Array = np.ndarray

_GRAD_ENABLED = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block; forward values only."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")
    # Keep numpy from absorbing mixed ndarray/Tensor expressions so the
    # reflected operators below run instead.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], Sequence[Array | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division between tensors is not supported")
        return mul(self, Tensor(1.0 / float(other)))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into each requiring leaf's .grad.

        self must be a scalar produced by recorded operations.
        """
        if self.data.size != 1:
            raise UsageError("backward() requires a scalar loss")
        if self._vjp is None:
            raise UsageError(
                "backward() called before any recorded forward pass"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        running: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            out_grad = running.pop(id(node), None)
            if out_grad is None:
                continue
            if node._vjp is None:
                node.grad = out_grad if node.grad is None else node.grad + out_grad
                continue
            for parent, pg in zip(node._parents, node._vjp(out_grad)):
                if pg is None:
                    continue
                key = id(parent)
                if key in running:
                    running[key] = running[key] + pg
                else:
                    running[key] = pg


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g: Array):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g: Array):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g: Array):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g: Array):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), vjp)


def linear(x: Tensor | Array, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w.T + b for a batch of row vectors."""
    xt = _lift(x)

    def vjp(g: Array):
        gx = g @ w.data if xt.requires_grad else None
        gw = g.T @ xt.data if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _node(xt.data @ w.data.T + b.data, (xt, w, b), vjp)


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * s

    def vjp(g: Array):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return _node(out, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def vjp(g: Array):
        return (g * (1.0 - t * t),)

    return _node(t, (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    def vjp(g: Array):
        return (np.full(x.data.shape, float(g)),)

    return _node(np.asarray(x.data.sum()), (x,), vjp)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def vjp(g: Array):
        return (np.full(x.data.shape, float(g) / n),)

    return _node(np.asarray(x.data.mean()), (x,), vjp)
