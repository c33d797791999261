"""Portable text serialization for models and adapters (format "cfn-v1").

Layout, line oriented:

    cfn-v1
    kind <model|adapter>
    meta <single-line canonical JSON>
    tensor <name> <d0> [d1 ...]
    <all values as C99 hex floats, space separated, one line>
    ... more tensors ...
    end

Hex floats round-trip float64 bit-exactly, so save -> load -> save is
byte-identical. A missing "end" trailer or short value line marks a
truncated file and loading fails without constructing a partial object.
"""

from __future__ import annotations

import json
import os
from typing import Mapping

import numpy as np

from .autodiff import Tensor
from .errors import SerializationError
from .nets import VectorFieldNet

Array = np.ndarray

FORMAT_VERSION = "cfn-v1"


def _canon_meta(meta: Mapping) -> str:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"))


def write_record(path: str, kind: str, meta: Mapping, tensors: list[tuple[str, Array]]) -> None:
    lines = [FORMAT_VERSION, f"kind {kind}", f"meta {_canon_meta(meta)}"]
    for name, arr in tensors:
        arr = np.asarray(arr, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape) if arr.ndim else "0"
        lines.append(f"tensor {name} {dims}")
        lines.append(" ".join(v.hex() for v in arr.ravel().tolist()))
    lines.append("end")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_record(path: str, expect_kind: str | None = None):
    """Return (kind, meta, tensors) or raise SerializationError."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise SerializationError(f"cannot read {path}: {e}") from e
    if not lines:
        raise SerializationError(f"{path}: empty file")
    if lines[0] != FORMAT_VERSION:
        raise SerializationError(
            f"{path}: unsupported format {lines[0]!r}, expected {FORMAT_VERSION}")
    if len(lines) < 3 or not lines[1].startswith("kind ") or not lines[2].startswith("meta "):
        raise SerializationError(f"{path}: malformed header")
    kind = lines[1][5:]
    if expect_kind is not None and kind != expect_kind:
        raise SerializationError(f"{path}: kind {kind!r}, expected {expect_kind!r}")
    try:
        meta = json.loads(lines[2][5:])
    except json.JSONDecodeError as e:
        raise SerializationError(f"{path}: bad meta line: {e}") from e
    tensors: list[tuple[str, Array]] = []
    i = 3
    closed = False
    while i < len(lines):
        line = lines[i]
        if line == "end":
            closed = True
            i += 1
            break
        if not line.startswith("tensor "):
            raise SerializationError(f"{path}: expected tensor header at line {i + 1}")
        parts = line.split()
        if len(parts) < 3:
            raise SerializationError(f"{path}: malformed tensor header at line {i + 1}")
        name = parts[1]
        try:
            shape = tuple(int(d) for d in parts[2:])
        except ValueError as e:
            raise SerializationError(f"{path}: bad tensor shape at line {i + 1}") from e
        if i + 1 >= len(lines):
            raise SerializationError(f"{path}: truncated (missing values for {name})")
        shape = () if shape == (0,) else shape
        count = int(np.prod(shape)) if shape else 1
        raw = lines[i + 1].split()
        if len(raw) != count:
            raise SerializationError(
                f"{path}: tensor {name} has {len(raw)} values, expected {count}")
        try:
            values = np.array([float.fromhex(v) for v in raw], dtype=np.float64)
        except ValueError as e:
            raise SerializationError(f"{path}: bad value in tensor {name}: {e}") from e
        tensors.append((name, values.reshape(shape)))
        i += 2
    if not closed or i != len(lines):
        raise SerializationError(f"{path}: truncated or trailing garbage")
    return kind, meta, tensors


def save_model(net: VectorFieldNet, path: str) -> None:
    meta = {
        "activation": net.activation,
        "prompt_dim": net.prompt_dim,
        "n_layers": net.n_layers,
    }
    tensors: list[tuple[str, Array]] = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        tensors.append((f"W{i}", w.data))
        tensors.append((f"b{i}", b.data))
    write_record(path, "model", meta, tensors)


def load_model(path: str) -> VectorFieldNet:
    _, meta, tensors = read_record(path, expect_kind="model")
    try:
        n_layers = int(meta["n_layers"])
        prompt_dim = int(meta["prompt_dim"])
        activation = str(meta["activation"])
    except (KeyError, TypeError, ValueError) as e:
        raise SerializationError(f"{path}: incomplete model meta") from e
    named = dict(tensors)
    if len(named) != len(tensors):
        raise SerializationError(f"{path}: duplicate tensor names")
    weights, biases = [], []
    for i in range(n_layers):
        try:
            weights.append(Tensor(named[f"W{i}"]))
            biases.append(Tensor(named[f"b{i}"]))
        except KeyError as e:
            raise SerializationError(f"{path}: missing tensor {e.args[0]}") from e
    try:
        return VectorFieldNet(weights, biases, prompt_dim, activation)
    except Exception as e:
        raise SerializationError(f"{path}: inconsistent model record: {e}") from e
