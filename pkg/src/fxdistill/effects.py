"""Synthetic 2-D effects, their few-shot datasets, and the effect registry.

Each effect is an exactly computable map T: R^2 -> R^2, which doubles as the
evaluation oracle. Sources come from a fixed 4-Gaussian mixture; paired
datasets add observation noise sigma_eff on the targets.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import prompts
from .errors import ConfigError, SerializationError
from .prompts import PromptEmb
from .rng import Rng

Array = np.ndarray

MIX_CENTERS = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
MIX_SIGMA = 0.15
ANNULUS_RADII = (2.2, 2.8)

_REQUIRED_PARAMS: dict[str, tuple[str, ...]] = {
    "rotation": ("angle_deg",),
    "scaling": ("factor",),
    "translation": ("dx", "dy"),
    "reflection": ("axis",),
    "swirl": ("strength",),
    "identity": (),
}


@dataclass(frozen=True)
class EffectSpec:
    """One parameterized transform with its conditioning identifiers."""

    id: int
    kind: str
    params: Mapping[str, object] = field(default_factory=dict)
    sigma_eff: float = 0.02
    descriptor_seed: int = 0

    def __post_init__(self):
        if self.id < 0:
            raise ConfigError("effect id must be non-negative")
        if self.kind not in _REQUIRED_PARAMS:
            raise ConfigError(f"unknown effect kind {self.kind!r}")
        missing = [k for k in _REQUIRED_PARAMS[self.kind] if k not in self.params]
        if missing:
            raise ConfigError(f"effect {self.kind!r} missing params {missing}")
        if self.sigma_eff < 0:
            raise ConfigError("sigma_eff must be >= 0")
        if self.kind == "reflection" and self.params["axis"] not in ("x", "y"):
            raise ConfigError("reflection axis must be 'x' or 'y'")

    @property
    def trigger_index(self) -> int:
        return self.id

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "params": dict(self.params),
            "sigma_eff": self.sigma_eff,
            "seed": self.descriptor_seed,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "EffectSpec":
        try:
            return cls(id=int(d["id"]), kind=str(d["kind"]), params=dict(d["params"]),
                       sigma_eff=float(d.get("sigma_eff", 0.02)),
                       descriptor_seed=int(d["seed"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed effect entry {d!r}: {e}") from e


def apply_effect(spec: EffectSpec, x: Array) -> Array:
    """Exact transform of an (n, 2) point block; the ground-truth oracle.

    swirl rotates each point by an angle theta(r) = strength * exp(-r^2 / 2).
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    pts = x.reshape(-1, 2)
    kind = spec.kind
    if kind == "identity":
        out = pts.copy()
    elif kind == "rotation":
        a = np.deg2rad(float(spec.params["angle_deg"]))
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        out = pts @ rot.T
    elif kind == "scaling":
        out = float(spec.params["factor"]) * pts
    elif kind == "translation":
        out = pts + np.array([float(spec.params["dx"]), float(spec.params["dy"])])
    elif kind == "reflection":
        out = pts.copy()
        if spec.params["axis"] == "x":
            out[:, 1] = -out[:, 1]
        else:
            out[:, 0] = -out[:, 0]
    elif kind == "swirl":
        r2 = np.sum(pts * pts, axis=1)
        theta = float(spec.params["strength"]) * np.exp(-r2 / 2.0)
        c, s = np.cos(theta), np.sin(theta)
        out = np.stack([c * pts[:, 0] - s * pts[:, 1],
                        s * pts[:, 0] + c * pts[:, 1]], axis=1)
    else:  # pragma: no cover - guarded by __post_init__
        raise ConfigError(f"unknown effect kind {kind!r}")
    return out[0] if squeeze else out


def sample_sources(n: int, rng: Rng) -> Array:
    """Draw from the in-distribution source mixture."""
    comp = rng.integers(0, len(MIX_CENTERS), n)
    return MIX_CENTERS[comp] + MIX_SIGMA * rng.normal((n, 2))


def sample_annulus(n: int, rng: Rng,
                   radii: tuple[float, float] = ANNULUS_RADII) -> Array:
    """Out-of-support sources on a ring well outside the mixture's 3-sigma."""
    r_in, r_out = radii
    r = rng.uniform(r_in, r_out, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


@dataclass
class PairDataset:
    """Sources plus optional targets; targets absent for the general set."""

    x_src: Array
    y: Array | None
    tag: str

    def __post_init__(self):
        self.x_src = np.asarray(self.x_src, dtype=np.float64).reshape(-1, 2)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64).reshape(-1, 2)
            if self.y.shape != self.x_src.shape:
                raise ConfigError("x_src and y must align")

    def __len__(self) -> int:
        return self.x_src.shape[0]


def build_effect_dataset(spec: EffectSpec, n: int = 20, rng: Rng | None = None) -> PairDataset:
    if rng is None:
        raise ConfigError("an rng is required")
    x_src = sample_sources(n, rng)
    y = apply_effect(spec, x_src) + spec.sigma_eff * rng.normal((n, 2))
    return PairDataset(x_src, y, tag=f"effect_{spec.id:02d}")


def build_general_dataset(n: int = 2000, rng: Rng | None = None) -> PairDataset:
    if rng is None:
        raise ConfigError("an rng is required")
    return PairDataset(sample_sources(n, rng), None, tag="general")


def reconstruction_pairs(sources: Array, rng: Rng, sigma: float = 0.05) -> PairDataset:
    """Identity-edit targets y = x_src + N(0, sigma^2 I) for base training."""
    sources = np.asarray(sources, dtype=np.float64).reshape(-1, 2)
    y = sources + sigma * rng.normal(sources.shape)
    return PairDataset(sources, y, tag="reconstruction")


def save_dataset(ds: PairDataset, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        for i in range(len(ds)):
            row: dict = {"x_src": ds.x_src[i].tolist()}
            if ds.y is not None:
                row["y"] = ds.y[i].tolist()
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    os.replace(tmp, path)


def load_dataset(path: str, tag: str) -> PairDataset:
    xs, ys = [], []
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    xs.append([float(v) for v in row["x_src"]])
                    if "y" in row:
                        ys.append([float(v) for v in row["y"]])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise SerializationError(f"{path}:{ln}: bad record: {e}") from e
    except OSError as e:
        raise SerializationError(f"cannot read {path}: {e}") from e
    if ys and len(ys) != len(xs):
        raise SerializationError(f"{path}: mixed labeled/unlabeled rows")
    x = np.array(xs, dtype=np.float64).reshape(-1, 2)
    y = np.array(ys, dtype=np.float64).reshape(-1, 2) if ys else None
    return PairDataset(x, y, tag=tag)


MAX_COSINE = 0.6


class EffectRegistry:
    """Effect specs plus prompt construction under one pair of block sizes.

    Descriptor seeds are chosen at build time so that every teacher, student,
    and general descriptor pair satisfies |cosine| < 0.6; loading re-verifies.
    """

    def __init__(self, specs: list[EffectSpec], trigger_dim: int = prompts.TRIGGER_DIM,
                 descriptor_dim: int = prompts.DESCRIPTOR_DIM):
        ids = [s.id for s in specs]
        if ids != list(range(len(specs))):
            raise ConfigError("effect ids must be 0..N-1 in order")
        if len(specs) > trigger_dim:
            raise ConfigError(
                f"{len(specs)} effects need trigger_dim >= {len(specs)}, have {trigger_dim}")
        self.specs = list(specs)
        self.trigger_dim = trigger_dim
        self.descriptor_dim = descriptor_dim
        self._verify_descriptors()

    def _all_descriptors(self) -> list[Array]:
        vecs = [prompts.general_prompt(self.trigger_dim, self.descriptor_dim).descriptor]
        for s in self.specs:
            vecs.append(prompts.descriptor_vector(s.descriptor_seed, "teacher", self.descriptor_dim))
            vecs.append(prompts.descriptor_vector(s.descriptor_seed, "student", self.descriptor_dim))
        return vecs

    def _verify_descriptors(self) -> None:
        vecs = self._all_descriptors()
        for i in range(len(vecs)):
            for j in range(i + 1, len(vecs)):
                if abs(float(vecs[i] @ vecs[j])) >= MAX_COSINE:
                    raise ConfigError(
                        "descriptor cosine constraint violated; rebuild the registry")

    @classmethod
    def build(cls, defs: list[tuple[str, Mapping[str, object]]], seed: int,
              trigger_dim: int = prompts.TRIGGER_DIM,
              descriptor_dim: int = prompts.DESCRIPTOR_DIM,
              sigma_eff: float = 0.02) -> "EffectRegistry":
        """Assign descriptor seeds, resampling any draw that is too aligned."""
        master = Rng(seed).substream("registry")
        accepted: list[Array] = [prompts.general_prompt(trigger_dim, descriptor_dim).descriptor]
        specs: list[EffectSpec] = []
        for i, (kind, params) in enumerate(defs):
            for attempt in range(1000):
                cand = int(master.integers(1, 2 ** 62))
                d_t = prompts.descriptor_vector(cand, "teacher", descriptor_dim)
                d_s = prompts.descriptor_vector(cand, "student", descriptor_dim)
                pool = accepted + [d_t]
                ok = all(abs(float(a @ b)) < MAX_COSINE
                         for a, b in [(d_t, d_s)] + [(v, d_t) for v in accepted]
                         + [(v, d_s) for v in pool])
                if ok:
                    specs.append(EffectSpec(id=i, kind=kind, params=dict(params),
                                            sigma_eff=sigma_eff, descriptor_seed=cand))
                    accepted.extend([d_t, d_s])
                    break
            else:
                raise ConfigError("could not satisfy descriptor cosine constraint")
        return cls(specs, trigger_dim, descriptor_dim)

    @property
    def n(self) -> int:
        return len(self.specs)

    @property
    def prompt_dim(self) -> int:
        return self.trigger_dim + self.descriptor_dim

    def spec(self, i: int) -> EffectSpec:
        if not 0 <= i < self.n:
            raise ConfigError(f"effect index {i} outside [0, {self.n})")
        return self.specs[i]

    def apply(self, i: int, x: Array) -> Array:
        return apply_effect(self.spec(i), x)

    def teacher_prompt(self, i: int) -> PromptEmb:
        return prompts.teacher_prompt(self.spec(i), self.trigger_dim, self.descriptor_dim)

    def student_prompt(self, i: int) -> PromptEmb:
        return prompts.student_prompt(self.spec(i), self.trigger_dim, self.descriptor_dim)

    def general_prompt(self) -> PromptEmb:
        return prompts.general_prompt(self.trigger_dim, self.descriptor_dim)

    def compose_prompt(self, a: int, b: int) -> PromptEmb:
        return prompts.compose_prompt(self.spec(a), self.spec(b),
                                      self.trigger_dim, self.descriptor_dim)

    def extended(self, kind: str, params: Mapping[str, object], seed: int,
                 sigma_eff: float = 0.02) -> "EffectRegistry":
        """New registry with one more effect appended under the same dims."""
        master = Rng(seed).substream("registry-extend", self.n)
        existing = self._all_descriptors()
        for attempt in range(1000):
            cand = int(master.integers(1, 2 ** 62))
            d_t = prompts.descriptor_vector(cand, "teacher", self.descriptor_dim)
            d_s = prompts.descriptor_vector(cand, "student", self.descriptor_dim)
            pool = existing + [d_t]
            ok = all(abs(float(a @ b)) < MAX_COSINE
                     for a, b in [(d_t, d_s)] + [(v, d_t) for v in existing]
                     + [(v, d_s) for v in pool])
            if ok:
                spec = EffectSpec(id=self.n, kind=kind, params=dict(params),
                                  sigma_eff=sigma_eff, descriptor_seed=cand)
                return EffectRegistry(self.specs + [spec], self.trigger_dim,
                                      self.descriptor_dim)
        raise ConfigError("could not satisfy descriptor cosine constraint")

    def to_json(self) -> dict:
        return {
            "trigger_dim": self.trigger_dim,
            "descriptor_dim": self.descriptor_dim,
            "effects": [s.to_json() for s in self.specs],
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "EffectRegistry":
        try:
            specs = [EffectSpec.from_json(e) for e in d["effects"]]
            return cls(specs, int(d["trigger_dim"]), int(d["descriptor_dim"]))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed registry: {e}") from e

    def save(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "EffectRegistry":
        try:
            with open(path) as fh:
                return cls.from_json(json.load(fh))
        except (OSError, json.JSONDecodeError) as e:
            raise SerializationError(f"cannot read registry {path}: {e}") from e


DEFAULT_EFFECT_DEFS: list[tuple[str, dict]] = [
    ("rotation", {"angle_deg": 45.0}),
    ("rotation", {"angle_deg": 90.0}),
    ("scaling", {"factor": 0.5}),
    ("scaling", {"factor": 1.5}),
    ("translation", {"dx": 0.9, "dy": 0.0}),
    ("translation", {"dx": 0.0, "dy": -0.9}),
    ("reflection", {"axis": "x"}),
    ("swirl", {"strength": 0.6}),
]

EXTENSION_EFFECT_DEF: tuple[str, dict] = ("rotation", {"angle_deg": -90.0})


def default_registry(seed: int, n_effects: int = len(DEFAULT_EFFECT_DEFS),
                     trigger_dim: int = prompts.TRIGGER_DIM,
                     descriptor_dim: int = prompts.DESCRIPTOR_DIM) -> EffectRegistry:
    defs = list(DEFAULT_EFFECT_DEFS)
    if n_effects > len(defs):
        raise ConfigError(f"only {len(defs)} default effects available")
    return EffectRegistry.build(defs[:n_effects], seed, trigger_dim, descriptor_dim)
