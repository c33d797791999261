"""Session fixtures for the acceptance suite.

The heavy artifacts (base net, eight teachers, the consolidated student,
the ablation grid, and the incremental extension) are trained once per
session at the reference configuration and shared across criteria. Each
fixture records its wall-clock training time so runtime bounds can be
asserted where they apply.
"""

import time

import numpy as np
import pytest

from fxdistill.distill import (TrainConfig, train_base, train_collection,
                               train_teacher)
from fxdistill.effects import (EXTENSION_EFFECT_DEF, build_effect_dataset,
                               build_general_dataset, default_registry,
                               reconstruction_pairs, sample_annulus,
                               sample_sources)
from fxdistill.lora import LoraBank
from fxdistill.rng import Rng

ACCEPT_SEED = 0

# Reference configuration. The base and teachers follow the default budgets
# (2000 teacher steps on 20 pairs); the collection run uses the pinned
# protocol values (5000 generator steps, p_switch 0.5, tau (0.5, 0.75),
# 5 critic updates per generator step, 4-step student schedule) plus the
# tuned free knobs (learning rates, rank, batch, paired-FM weight).
BASE_OVERRIDES = dict(seed=ACCEPT_SEED, hidden=256, lr=1e-3, base_steps=20000,
                      lr_final_frac=0.05, log_every=10 ** 6)
TEACHER_OVERRIDES = dict(lr=1e-2, lr_final_frac=0.02, rank=16, batch=64)
COLLECTION_OVERRIDES = dict(lr=3e-3, lr_final_frac=0.05, rank=16, batch=128,
                            w_paired_fm=3.0)

# The ablation grid runs the default loss weighting at a reduced budget so
# fifteen collection runs stay tractable; directionality, not absolute
# quality, is under test.
ABLATION_OVERRIDES = dict(lr=3e-3, lr_final_frac=0.05, rank=16, batch=64,
                          collection_gen_steps=1200)
ABLATION_PRESETS = {
    "full": {},
    "no-aop": dict(split_prompts=False),
    "no-ts": dict(w_target_sim=0.0),
    "dmd-only": dict(w_paired_fm=0.0, w_target_sim=0.0),
    "no-pdsr": dict(p_switch=1.0),
}
ABLATION_SEEDS = (0, 1, 2)

# Incremental extension: 100 generator steps, warm-started critic, flat
# learning rate, half the routing mass on the new effect.
EXTENSION_OVERRIDES = dict(lr=3e-3, lr_final_frac=1.0, extend_new_weight=0.5)

_CRITERIA: list[tuple[int, bool, str]] = []


@pytest.fixture(scope="session")
def record_criterion():
    def _record(num: int, ok: bool, detail: str) -> None:
        _CRITERIA.append((num, ok, detail))
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(_CRITERIA):
        status = "PASS" if ok else "FAIL"
        terminalreporter.line(f"[criterion {num:2d}] {status}: {detail}")


@pytest.fixture(scope="session")
def acc_config():
    return TrainConfig(**BASE_OVERRIDES)


@pytest.fixture(scope="session")
def acc_registry():
    return default_registry(seed=ACCEPT_SEED)


@pytest.fixture(scope="session")
def acc_data(acc_config, acc_registry):
    root = Rng(ACCEPT_SEED)
    effect_data = [build_effect_dataset(acc_registry.spec(i),
                                        acc_config.pairs_per_effect,
                                        root.substream("data", "effect", i))
                   for i in range(acc_registry.n)]
    general = build_general_dataset(acc_config.general_size,
                                    root.substream("data", "general"))
    recon = reconstruction_pairs(general.x_src, root.substream("data", "recon"),
                                 acc_config.recon_sigma)
    return {"effect": effect_data, "general": general, "recon": recon}


@pytest.fixture(scope="session")
def acc_held():
    return sample_sources(500, Rng(777))


@pytest.fixture(scope="session")
def acc_annulus():
    return sample_annulus(500, Rng(778))


@pytest.fixture(scope="session")
def acc_base(acc_config, acc_data):
    t0 = time.perf_counter()
    net, log = train_base(acc_config, acc_data["recon"])
    return {"net": net, "log": log, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def acc_teachers(acc_config, acc_registry, acc_data, acc_base):
    cfg = acc_config.with_overrides(**TEACHER_OVERRIDES)
    bank = LoraBank(acc_base["net"])
    t0 = time.perf_counter()
    for i in range(acc_registry.n):
        adapter, _ = train_teacher(acc_base["net"], acc_registry.spec(i),
                                   acc_data["effect"][i], cfg)
        bank.register(adapter)
    return {"bank": bank, "config": cfg, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def acc_collection(acc_config, acc_registry, acc_data, acc_base, acc_teachers):
    cfg = acc_config.with_overrides(**COLLECTION_OVERRIDES)
    base = acc_base["net"]
    frozen = [p.data.tobytes() for p in base.parameters()]
    t0 = time.perf_counter()
    result = train_collection(base, acc_teachers["bank"], acc_registry,
                              acc_data["effect"], acc_data["general"], cfg)
    seconds = time.perf_counter() - t0
    after = [p.data.tobytes() for p in base.parameters()]
    return {"result": result, "config": cfg, "seconds": seconds,
            "base_frozen": frozen == after}


@pytest.fixture(scope="session")
def acc_ablation_grid(acc_config, acc_registry, acc_data, acc_base,
                      acc_teachers):
    from fxdistill.flow import Schedule
    from fxdistill.lora import attach
    from fxdistill.metrics import (bleed_matrix, make_fewstep_sampler,
                                   ood_eval, sliced_wasserstein,
                                   variance_underestimation)

    srcs = sample_sources(400, Rng(901))
    annulus = sample_annulus(400, Rng(902))
    targets = [acc_registry.apply(i, srcs) for i in range(acc_registry.n)]
    grid: dict[str, list[dict]] = {}
    for name, preset in ABLATION_PRESETS.items():
        rows = []
        for seed in ABLATION_SEEDS:
            cfg = (acc_config.with_overrides(seed=seed, **ABLATION_OVERRIDES)
                   .with_overrides(**preset))
            result = train_collection(acc_base["net"], acc_teachers["bank"],
                                      acc_registry, acc_data["effect"],
                                      acc_data["general"], cfg)
            sampler = make_fewstep_sampler(attach(acc_base["net"], result.student),
                                           Schedule(cfg.schedule))
            bm = bleed_matrix(sampler, acc_registry, srcs, Rng(5000 + seed))
            sw, vu, ood = [], [], []
            for i in range(acc_registry.n):
                out = sampler(srcs, acc_registry.student_prompt(i),
                              Rng(6000 + 10 * seed + i))
                sw.append(sliced_wasserstein(out, targets[i], rng=Rng(7000 + i)))
                vu.append(variance_underestimation(out, targets[i]))
                ood.append(ood_eval(sampler, acc_registry, i, annulus,
                                    Rng(8000 + 10 * seed + i)))
            rows.append({"trig": bm.overall_trigger_rate,
                         "sw": float(np.mean(sw)),
                         "vu": float(np.mean(vu)),
                         "ood": float(np.mean(ood))})
        grid[name] = rows
    return grid


@pytest.fixture(scope="session")
def acc_extension(acc_config, acc_registry, acc_data, acc_base, acc_teachers,
                  acc_collection):
    from fxdistill.distill import extend_collection

    kind, params = EXTENSION_EFFECT_DEF
    reg9 = acc_registry.extended(kind, params, seed=ACCEPT_SEED)
    ds8 = build_effect_dataset(reg9.spec(8), acc_config.pairs_per_effect,
                               Rng(ACCEPT_SEED).substream("data", "effect", 8))
    new_teacher, _ = train_teacher(acc_base["net"], reg9.spec(8), ds8,
                                   acc_teachers["config"])
    cfg = (acc_config.with_overrides(**COLLECTION_OVERRIDES)
           .with_overrides(**EXTENSION_OVERRIDES))
    result = extend_collection(acc_base["net"], acc_teachers["bank"], reg9,
                               acc_data["effect"] + [ds8], acc_data["general"],
                               acc_collection["result"].student, new_teacher,
                               cfg, critic=acc_collection["result"].critic_adapter)
    return {"registry": reg9, "result": result, "config": cfg}
