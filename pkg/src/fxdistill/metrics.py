"""Evaluation: sliced Wasserstein distance, concept-bleed matrix, failure
rates, out-of-support checks, and composed-prompt scoring.

Every metric consumes a sampler: a callable (x_src, prompt, rng) -> outputs.
Real students are wrapped with make_fewstep_sampler; exact-transform oracles
and chance-level baselines substitute freely, which is how the metrics
themselves are tested.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .effects import EffectRegistry, apply_effect
from .errors import ConfigError
from .flow import Schedule, euler_sample, fewstep_sample
from .prompts import PromptEmb
from .rng import Rng

Array = np.ndarray


class Sampler(Protocol):
    def __call__(self, x_src: Array, prompt: PromptEmb, rng: Rng) -> Array: ...


def make_fewstep_sampler(net, schedule: Schedule) -> Sampler:
    """Deployment-style sampler around a (possibly adapted) velocity net."""

    def sampler(x_src: Array, prompt: PromptEmb, rng: Rng) -> Array:
        return fewstep_sample(net, schedule, x_src, prompt, rng)

    return sampler


def make_euler_sampler(net, steps: int) -> Sampler:
    """Many-step reference sampler (used for teacher-grade evaluation)."""

    def sampler(x_src: Array, prompt: PromptEmb, rng: Rng) -> Array:
        return euler_sample(net, x_src, prompt, steps, rng)

    return sampler


def make_oracle_sampler(registry: EffectRegistry, tol: float = 1e-9) -> Sampler:
    """Exact-transform stand-in: applies the effects named by the trigger.

    Trigger components above tol are applied in ascending index order.
    """

    def sampler(x_src: Array, prompt: PromptEmb, rng: Rng) -> Array:
        out = np.asarray(x_src, dtype=np.float64)
        for i in np.nonzero(prompt.trigger > tol)[0]:
            out = registry.apply(int(i), out)
        return out

    return sampler


def make_transform_sampler(fn: Callable[[Array], Array]) -> Sampler:
    """Wrap any deterministic map as a prompt-ignoring sampler."""

    def sampler(x_src: Array, prompt: PromptEmb, rng: Rng) -> Array:
        return fn(np.asarray(x_src, dtype=np.float64))

    return sampler


def make_noise_sampler(scale: float = 1.0) -> Sampler:
    """Chance-level baseline: outputs are pure noise."""

    def sampler(x_src: Array, prompt: PromptEmb, rng: Rng) -> Array:
        return scale * rng.normal((x_src.shape[0], 2))

    return sampler


def _w2_1d_sorted(xs: Array, ys: Array) -> Array:
    """Exact 1-D 2-Wasserstein per column of pre-sorted projections."""
    n, m = xs.shape[0], ys.shape[0]
    if n == m:
        d = xs - ys
        return np.sqrt(np.mean(d * d, axis=0))
    bp = np.union1d(np.arange(n + 1) / n, np.arange(m + 1) / m)
    widths = np.diff(bp)
    mids = (bp[:-1] + bp[1:]) / 2.0
    ix = np.minimum((mids * n).astype(int), n - 1)
    iy = np.minimum((mids * m).astype(int), m - 1)
    d = xs[ix, :] - ys[iy, :]
    return np.sqrt(widths @ (d * d))


def sliced_wasserstein(a: Array, b: Array, projections: int = 128,
                       rng: Rng | None = None) -> float:
    """Mean over random unit directions of the exact projected 1-D W2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ConfigError("point sets must be 2-D arrays with equal width")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ConfigError("point sets must be non-empty")
    if projections < 1:
        raise ConfigError("projections must be >= 1")
    if rng is None:
        rng = Rng(0)
    dirs = rng.normal((projections, a.shape[1]))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    dirs = dirs / norms
    pa = np.sort(a @ dirs.T, axis=0)
    pb = np.sort(b @ dirs.T, axis=0)
    return float(np.mean(_w2_1d_sorted(pa, pb)))


@dataclass
class BleedMatrix:
    """Cross-effect contamination summary.

    matrix[i][j] is the mean distance of outputs prompted for effect i to the
    exact targets of effect j; trigger_rates[i] is the fraction of samples
    whose nearest target row is the prompted one.
    """

    matrix: Array
    trigger_rates: Array

    @property
    def overall_trigger_rate(self) -> float:
        return float(self.trigger_rates.mean())

    def row_argmin_correct(self) -> bool:
        return bool(np.all(np.argmin(self.matrix, axis=1)
                           == np.arange(self.matrix.shape[0])))


def bleed_matrix(sampler: Sampler, registry: EffectRegistry,
                 eval_sources: Array, rng: Rng) -> BleedMatrix:
    """Generate under each effect's prompt and score against every oracle."""
    n_eff = registry.n
    sources = np.asarray(eval_sources, dtype=np.float64)
    targets = [registry.apply(j, sources) for j in range(n_eff)]
    matrix = np.zeros((n_eff, n_eff))
    rates = np.zeros(n_eff)
    for i in range(n_eff):
        out = sampler(sources, registry.student_prompt(i), rng.substream("row", i))
        dists = np.stack(
            [np.linalg.norm(out - t, axis=1) for t in targets], axis=1)
        matrix[i] = dists.mean(axis=0)
        rates[i] = float(np.mean(np.argmin(dists, axis=1) == i))
    return BleedMatrix(matrix, rates)


def bcr_analog(sampler: Sampler, registry: EffectRegistry, effect: int,
               eval_sources: Array, rng: Rng, rho: float | None = None) -> float:
    """Failure rate: fraction of outputs farther than rho from the target."""
    spec = registry.spec(effect)
    if rho is None:
        rho = 3.0 * spec.sigma_eff
    sources = np.asarray(eval_sources, dtype=np.float64)
    out = sampler(sources, registry.student_prompt(effect), rng)
    err = np.linalg.norm(out - apply_effect(spec, sources), axis=1)
    return float(np.mean(err > rho))


def ood_eval(sampler: Sampler, registry: EffectRegistry, effect: int,
             annulus_sources: Array, rng: Rng, rho: float | None = None) -> float:
    """bcr_analog on sources outside the training support."""
    return bcr_analog(sampler, registry, effect, annulus_sources, rng, rho)


def variance_underestimation(outputs: Array, targets: Array) -> float:
    """Positive part of the total-variance deficit of outputs vs targets.

    Total variance is the trace of the sample covariance; mode-seeking
    failure shows up as outputs spreading less than the targets they chase.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if outputs.ndim != 2 or targets.ndim != 2 or outputs.shape[0] < 2 or targets.shape[0] < 2:
        raise ConfigError("variance comparison needs 2-D sets with >= 2 rows")
    v_out = float(np.trace(np.cov(outputs.T)))
    v_tgt = float(np.trace(np.cov(targets.T)))
    return max(0.0, v_tgt - v_out)


@dataclass
class CompositionScore:
    """Distances of composed-prompt outputs to composed and single targets."""

    effect_a: int
    effect_b: int
    to_composed: float
    to_a: float
    to_b: float

    @property
    def emergent(self) -> bool:
        return self.to_composed < min(self.to_a, self.to_b)

    def to_json(self) -> dict:
        return {
            "effect_a": self.effect_a,
            "effect_b": self.effect_b,
            "to_composed": self.to_composed,
            "to_a": self.to_a,
            "to_b": self.to_b,
            "emergent": self.emergent,
        }


def composition_score(sampler: Sampler, registry: EffectRegistry, a: int, b: int,
                      eval_sources: Array, rng: Rng) -> CompositionScore:
    """Score outputs under compose_prompt(a, b) against T_b(T_a(x))."""
    sources = np.asarray(eval_sources, dtype=np.float64)
    out = sampler(sources, registry.compose_prompt(a, b), rng)
    t_a = registry.apply(a, sources)
    t_b = registry.apply(b, sources)
    t_ab = registry.apply(b, registry.apply(a, sources))
    return CompositionScore(
        effect_a=a,
        effect_b=b,
        to_composed=float(np.linalg.norm(out - t_ab, axis=1).mean()),
        to_a=float(np.linalg.norm(out - t_a, axis=1).mean()),
        to_b=float(np.linalg.norm(out - t_b, axis=1).mean()),
    )


@dataclass
class EvalReport:
    """One student's scorecard across all evaluation suites."""

    nfe: int
    sw_per_effect: dict[int, float] = field(default_factory=dict)
    teacher_sw_per_effect: dict[int, float] = field(default_factory=dict)
    trigger_rates: dict[int, float] = field(default_factory=dict)
    bcr_per_effect: dict[int, float] = field(default_factory=dict)
    ood_bcr_per_effect: dict[int, float] = field(default_factory=dict)
    compositions: list[CompositionScore] = field(default_factory=list)

    @property
    def overall_trigger_rate(self) -> float:
        if not self.trigger_rates:
            return 0.0
        return float(np.mean(list(self.trigger_rates.values())))

    def to_json(self) -> dict:
        return {
            "nfe": self.nfe,
            "sw_per_effect": {str(k): v for k, v in self.sw_per_effect.items()},
            "teacher_sw_per_effect": {str(k): v for k, v in self.teacher_sw_per_effect.items()},
            "trigger_rates": {str(k): v for k, v in self.trigger_rates.items()},
            "overall_trigger_rate": self.overall_trigger_rate,
            "bcr_per_effect": {str(k): v for k, v in self.bcr_per_effect.items()},
            "ood_bcr_per_effect": {str(k): v for k, v in self.ood_bcr_per_effect.items()},
            "compositions": [c.to_json() for c in self.compositions],
        }

    def save(self, dirpath: str, stem: str = "report") -> list[str]:
        """Write the JSON report plus a per-effect CSV; returns paths."""
        os.makedirs(dirpath, exist_ok=True)
        json_path = os.path.join(dirpath, f"{stem}.json")
        with open(json_path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        csv_path = os.path.join(dirpath, f"{stem}.csv")
        effects = sorted(set(self.sw_per_effect) | set(self.trigger_rates)
                         | set(self.bcr_per_effect) | set(self.ood_bcr_per_effect))
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["effect", "sw", "teacher_sw", "trigger_rate",
                             "bcr", "ood_bcr"])
            for i in effects:
                writer.writerow([
                    i,
                    self.sw_per_effect.get(i, ""),
                    self.teacher_sw_per_effect.get(i, ""),
                    self.trigger_rates.get(i, ""),
                    self.bcr_per_effect.get(i, ""),
                    self.ood_bcr_per_effect.get(i, ""),
                ])
        return [json_path, csv_path]


def save_bleed_csv(bm: BleedMatrix, path: str) -> None:
    n = bm.matrix.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prompted"] + [f"target_{j}" for j in range(n)]
                        + ["trigger_rate"])
        for i in range(n):
            writer.writerow([i] + [f"{v:.6f}" for v in bm.matrix[i]]
                            + [f"{bm.trigger_rates[i]:.4f}"])
