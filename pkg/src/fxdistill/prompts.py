"""Prompt embeddings: an orthonormal trigger block plus a descriptor block.

Teachers keep their original conditioning (zero trigger, seeded "teacher"
descriptor). The student sees a different view of the same effect: a one-hot
trigger unique to the effect plus a distinct "student" descriptor. The
general stream uses a fixed descriptor with no trigger. The asymmetry is
deliberate: student conditioning never equals teacher conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import Rng

Array = np.ndarray

TRIGGER_DIM = 16
DESCRIPTOR_DIM = 16

_GENERAL_SEED = 1


@dataclass(frozen=True, eq=False)
class PromptEmb:
    """Conditioning vector split into trigger and descriptor blocks."""

    trigger: Array
    descriptor: Array

    def __post_init__(self):
        t = np.asarray(self.trigger, dtype=np.float64)
        d = np.asarray(self.descriptor, dtype=np.float64)
        tn = float(np.linalg.norm(t))
        if not (tn < 1e-9 or abs(tn - 1.0) < 1e-9):
            raise ConfigError(f"trigger norm must be 0 or 1, got {tn}")
        if abs(float(np.linalg.norm(d)) - 1.0) > 1e-9:
            raise ConfigError("descriptor must be a unit vector")
        t.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "trigger", t)
        object.__setattr__(self, "descriptor", d)

    @property
    def vector(self) -> Array:
        return np.concatenate([self.trigger, self.descriptor])

    @property
    def dim(self) -> int:
        return self.trigger.shape[0] + self.descriptor.shape[0]

    def allclose(self, other: "PromptEmb", tol: float = 0.0) -> bool:
        if self.trigger.shape != other.trigger.shape:
            return False
        if self.descriptor.shape != other.descriptor.shape:
            return False
        return bool(
            np.all(np.abs(self.trigger - other.trigger) <= tol)
            and np.all(np.abs(self.descriptor - other.descriptor) <= tol))


def descriptor_vector(descriptor_seed: int, role: str, d_d: int = DESCRIPTOR_DIM) -> Array:
    """Deterministic unit vector keyed by (descriptor_seed, role)."""
    v = Rng(descriptor_seed).substream("descriptor", role).normal((d_d,))
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise ConfigError("degenerate descriptor draw")
    return v / n


def teacher_prompt(spec, d_t: int = TRIGGER_DIM, d_d: int = DESCRIPTOR_DIM) -> PromptEmb:
    """The conditioning an effect teacher was trained with: no trigger."""
    return PromptEmb(np.zeros(d_t), descriptor_vector(spec.descriptor_seed, "teacher", d_d))


def student_prompt(spec, d_t: int = TRIGGER_DIM, d_d: int = DESCRIPTOR_DIM) -> PromptEmb:
    """The student's view of the effect: one-hot trigger + distinct descriptor."""
    idx = spec.trigger_index
    if not 0 <= idx < d_t:
        raise ConfigError(
            f"trigger index {idx} does not fit in trigger block of size {d_t}")
    trigger = np.zeros(d_t)
    trigger[idx] = 1.0
    return PromptEmb(trigger, descriptor_vector(spec.descriptor_seed, "student", d_d))


def general_prompt(d_t: int = TRIGGER_DIM, d_d: int = DESCRIPTOR_DIM) -> PromptEmb:
    """Fixed conditioning for unlabeled general-domain work: no trigger."""
    return PromptEmb(np.zeros(d_t), descriptor_vector(_GENERAL_SEED, "general", d_d))


def compose_prompt(spec_a, spec_b, d_t: int = TRIGGER_DIM, d_d: int = DESCRIPTOR_DIM) -> PromptEmb:
    """Ask for both effects at once: normalized trigger and descriptor sums."""
    pa = student_prompt(spec_a, d_t, d_d)
    pb = student_prompt(spec_b, d_t, d_d)
    trigger = pa.trigger + pb.trigger
    trigger = trigger / float(np.linalg.norm(trigger))
    desc = pa.descriptor + pb.descriptor
    dn = float(np.linalg.norm(desc))
    if dn < 1e-9:
        raise ConfigError("composed descriptors cancel; regenerate descriptor seeds")
    return PromptEmb(trigger, desc / dn)
