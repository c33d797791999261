"""Parametric serving-cost simulator.

Compares two deployment paradigms over a query trace: one adapter per effect
(router picks among n candidates, every adapter change pays a load) versus
consolidated collections of up to K effects each (router needed only across
collections, in-collection dispatch rides on the trigger prompt).

Latency and accuracy curves are inputs, not measurements: defaults are
interpolated from published single-GPU readings and can be replaced wholesale
in the config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .rng import Rng

Array = np.ndarray

DEFAULT_ROUTER_LATENCY = {10: 6.88, 20: 6.95, 50: 7.09, 100: 7.22, 150: 9.18}
DEFAULT_ROUTER_ACCURACY = {10: 0.99, 20: 0.94, 50: 0.87, 100: 0.85, 150: 0.76}


def _interp_curve(anchors: dict[int, float], n: int) -> float:
    xs = np.array(sorted(anchors), dtype=np.float64)
    ys = np.array([anchors[int(x)] for x in xs], dtype=np.float64)
    return float(np.interp(float(n), xs, ys))


@dataclass
class DeployConfig:
    """One simulated serving scenario."""

    n_effects: int
    trace: list[int]
    effects_per_collection: int = 50
    per_lora_storage: float = 2.2
    load_latency: float = 1.2
    router_latency_anchors: dict[int, float] = field(
        default_factory=lambda: dict(DEFAULT_ROUTER_LATENCY))
    router_accuracy_anchors: dict[int, float] = field(
        default_factory=lambda: dict(DEFAULT_ROUTER_ACCURACY))

    def __post_init__(self):
        if self.n_effects < 1:
            raise ConfigError("n_effects must be >= 1")
        if self.effects_per_collection < 1:
            raise ConfigError("effects_per_collection must be >= 1")
        if self.per_lora_storage < 0 or self.load_latency < 0:
            raise ConfigError("storage and latency must be >= 0")
        for anchors, increasing in ((self.router_latency_anchors, True),
                                    (self.router_accuracy_anchors, False)):
            if not anchors:
                raise ConfigError("anchor curves must be non-empty")
            keys = sorted(anchors)
            vals = [anchors[k] for k in keys]
            pairs = zip(vals, vals[1:])
            ok = all(a <= b for a, b in pairs) if increasing else all(
                a >= b for a, b in zip(vals, vals[1:]))
            if not ok:
                raise ConfigError("anchor curve violates monotonicity")
        for v in self.router_accuracy_anchors.values():
            if not 0.0 <= v <= 1.0:
                raise ConfigError("accuracy anchors must lie in [0, 1]")

    def router_latency(self, candidates: int) -> float:
        return _interp_curve(self.router_latency_anchors, candidates)

    def router_accuracy(self, candidates: int) -> float:
        return _interp_curve(self.router_accuracy_anchors, candidates)


@dataclass
class ParadigmCost:
    storage: float
    routing_latency: float
    switches: int
    switch_cost: float
    accuracy: float

    def to_json(self) -> dict:
        return {
            "storage": self.storage,
            "routing_latency": self.routing_latency,
            "switches": self.switches,
            "switch_cost": self.switch_cost,
            "accuracy": self.accuracy,
        }


@dataclass
class CostReport:
    n_effects: int
    collections: int
    n_queries: int
    baseline: ParadigmCost
    ours: ParadigmCost

    def to_json(self) -> dict:
        return {
            "n_effects": self.n_effects,
            "collections": self.collections,
            "n_queries": self.n_queries,
            "baseline": self.baseline.to_json(),
            "ours": self.ours.to_json(),
        }


def _count_switches(ids: Array) -> int:
    """Consecutive query pairs that require a different loaded adapter."""
    if ids.shape[0] < 2:
        return 0
    return int(np.sum(ids[1:] != ids[:-1]))


def simulate(cfg: DeployConfig) -> CostReport:
    trace = np.asarray(cfg.trace, dtype=np.int64)
    if trace.size == 0:
        raise ConfigError("query trace must be non-empty")
    if np.any(trace < 0) or np.any(trace >= cfg.n_effects):
        raise ConfigError("trace contains effect ids outside [0, n_effects)")
    n = cfg.n_effects
    k = cfg.effects_per_collection
    collections = math.ceil(n / k)
    n_queries = int(trace.size)

    baseline = ParadigmCost(
        storage=n * cfg.per_lora_storage,
        routing_latency=n_queries * cfg.router_latency(n),
        switches=_count_switches(trace),
        switch_cost=cfg.load_latency * _count_switches(trace),
        accuracy=cfg.router_accuracy(n),
    )
    collection_ids = trace // k
    ours_switches = _count_switches(collection_ids)
    if collections == 1:
        routing = 0.0
        accuracy = 1.0
    else:
        routing = n_queries * cfg.router_latency(collections)
        accuracy = cfg.router_accuracy(collections)
    ours = ParadigmCost(
        storage=collections * cfg.per_lora_storage,
        routing_latency=routing,
        switches=ours_switches,
        switch_cost=cfg.load_latency * ours_switches,
        accuracy=accuracy,
    )
    return CostReport(n_effects=n, collections=collections, n_queries=n_queries,
                      baseline=baseline, ours=ours)


def synth_trace(n_effects: int, length: int = 200, rng: Rng | None = None) -> list[int]:
    """Uniform i.i.d. query trace over effect ids."""
    if n_effects < 1 or length < 1:
        raise ConfigError("n_effects and length must be >= 1")
    if rng is None:
        rng = Rng(0)
    return [int(v) for v in rng.integers(0, n_effects, length)]


def cost_table(reports: list[CostReport]) -> list[list[str]]:
    """Row/column table: metric-method rows, one column per effect count."""
    header = ["metric", "method"] + [f"{r.n_effects}_loras" for r in reports]
    rows = [header]
    metrics = [
        ("routing_latency_per_query",
         lambda c, r: f"{c.routing_latency / r.n_queries:.2f}"),
        ("load_latency_x_switches", lambda c, r: f"{c.switch_cost:.1f}"),
        ("routing_accuracy", lambda c, r: f"{c.accuracy:.2f}"),
        ("storage", lambda c, r: f"{c.storage:.1f}"),
    ]
    for name, fn in metrics:
        rows.append([name, "baseline"] + [fn(r.baseline, r) for r in reports])
        rows.append([name, "ours"] + [fn(r.ours, r) for r in reports])
    return rows
