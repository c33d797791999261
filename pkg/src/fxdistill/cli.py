"""Command-line surface tying the library together end to end.

Subcommands cover the full workflow: ``gen-data`` materialises effect
datasets and a registry, ``train`` fits the base net, individual teachers,
the consolidated student, or an incremental extension, ``sample`` dumps
model outputs, ``eval`` scores a student under one of five suites,
``deploy-sim`` tabulates serving costs, and ``ablate`` reruns collection
training with one component disabled.

Conventions shared by every subcommand:

- ``--out`` directories are created on demand and never shared between
  concurrent runs (a ``.lock`` file guards them). A directory holding a
  completed run (``manifest.json`` present) is refused unless ``--force``.
- All randomness flows from one seed, resolved as ``--seed`` flag, then the
  ``COLLECTION_SEED`` environment variable, then the config file's value.
- ``manifest.json`` is written last, atomically, and lists every file the
  run produced together with the seed and a hash of the effective config.
- Exit codes: 0 success; 1 runtime failure (divergence, lock conflict,
  refusing to overwrite); 2 usage error (bad flags, missing or invalid
  config/input files).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .deploy import DeployConfig, cost_table, simulate, synth_trace
from .distill import (StepEvent, TrainConfig, extend_collection,
                      train_base, train_collection, train_teacher)
from .effects import (EffectRegistry, build_effect_dataset,
                      build_general_dataset, load_dataset,
                      reconstruction_pairs, sample_annulus, sample_sources,
                      save_dataset)
from .errors import (ConfigError, RetrievalError, SerializationError,
                     TrainingDiverged, UsageError)
from .flow import Schedule
from .lora import LoraBank, attach, load_adapter, save_adapter
from .metrics import (EvalReport, bcr_analog, bleed_matrix, composition_score,
                      make_euler_sampler, make_fewstep_sampler, ood_eval,
                      save_bleed_csv, sliced_wasserstein)
from .modelio import load_model, save_model
from .rng import Rng

SEED_ENV = "COLLECTION_SEED"
TEACHER_EULER_STEPS = 200

ABLATION_PRESETS: dict[str, dict] = {
    "full": {},
    "no-aop": {"split_prompts": False},
    "no-ts": {"w_target_sim": 0.0},
    "no-tafm": {"w_paired_fm": 0.0},
    "no-pdsr": {"p_switch": 1.0},
    "dmd-only": {"w_paired_fm": 0.0, "w_target_sim": 0.0},
}

DATA_MANIFEST_DEFAULTS = {
    "trigger_dim": 16,
    "descriptor_dim": 16,
    "sigma_eff": 0.02,
    "pairs_per_effect": 20,
    "general_size": 2000,
    "recon_sigma": 0.05,
}


# ---------------------------------------------------------------------------
# run-directory plumbing


@dataclass
class RunManifest:
    """Record of one finished command, written atomically as the last file."""

    command: str
    seed: int
    config_hash: str
    artifacts: list[str] = field(default_factory=list)
    versions: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "artifacts": sorted(self.artifacts),
            "versions": self.versions,
        }


def _versions() -> dict:
    return {
        "fxdistill": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def _config_hash(effective: dict) -> str:
    canon = json.dumps(effective, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_json(path: str, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _acquire(out_dir: str, force: bool) -> str:
    """Create the run directory, refuse completed runs, take the lock."""
    os.makedirs(out_dir, exist_ok=True)
    if os.path.exists(os.path.join(out_dir, "manifest.json")) and not force:
        raise RuntimeError(
            f"{out_dir} already holds a completed run; pass --force to overwrite")
    lock = os.path.join(out_dir, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"{out_dir} is locked by another run (remove {lock} if stale)"
        ) from None
    os.close(fd)
    return lock


def _finish(out_dir: str, command: str, seed: int, effective_config: dict,
            artifacts: list[str]) -> None:
    manifest = RunManifest(command=command, seed=seed,
                           config_hash=_config_hash(effective_config),
                           artifacts=artifacts + ["manifest.json"],
                           versions=_versions())
    _write_json(os.path.join(out_dir, "manifest.json"), manifest.to_json())


def _resolve_seed(flag_seed: int | None, config_seed: int | None = None) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if config_seed is not None:
        return config_seed
    return 0


def _write_metrics_csv(path: str, rows: list[dict]) -> None:
    """Union-of-keys CSV; later rows may add columns (periodic eval fields)."""
    fields: list[str] = []
    for row in rows:
        for k in row:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="")
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# input loading


def _read_json_file(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {what} {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} {path} must hold a JSON object")
    return doc


def _load_train_config(path: str, flag_seed: int | None) -> TrainConfig:
    cfg = TrainConfig.from_json(_read_json_file(path, "config"))
    return cfg.with_overrides(seed=_resolve_seed(flag_seed, cfg.seed))


def _load_registry(data_dir: str) -> EffectRegistry:
    return EffectRegistry.load(os.path.join(data_dir, "registry.json"))


def _load_effect_data(data_dir: str, registry: EffectRegistry):
    return [load_dataset(os.path.join(data_dir, f"effect_{i:02d}.ndjson"),
                         tag=f"effect_{i:02d}")
            for i in range(registry.n)]


def _load_general(data_dir: str):
    return load_dataset(os.path.join(data_dir, "general.ndjson"), tag="general")


def _load_bank(base, teachers_dir: str) -> LoraBank:
    if not os.path.isdir(teachers_dir):
        raise ConfigError(f"teacher directory not found: {teachers_dir}")
    if os.path.exists(os.path.join(teachers_dir, "bank.json")):
        return LoraBank.load_dir(teachers_dir, base)
    bank = LoraBank(base)
    names = sorted(f for f in os.listdir(teachers_dir)
                   if f.startswith("effect_") and f.endswith(".cfn"))
    if not names:
        raise ConfigError(f"no teacher adapters in {teachers_dir}")
    for fname in names:
        bank.register(load_adapter(os.path.join(teachers_dir, fname)))
    return bank


def _schedule_from(config_path: str | None) -> Schedule:
    if config_path is None:
        return Schedule(TrainConfig().schedule)
    return Schedule(TrainConfig.from_json(_read_json_file(config_path, "config")).schedule)


# ---------------------------------------------------------------------------
# gen-data


def _parse_effect_manifest(path: str) -> dict:
    doc = _read_json_file(path, "effect manifest")
    allowed = {"effects"} | set(DATA_MANIFEST_DEFAULTS)
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown effect-manifest keys: {sorted(unknown)}")
    if "effects" not in doc or not isinstance(doc["effects"], list) or not doc["effects"]:
        raise ConfigError("effect manifest needs a non-empty 'effects' list")
    defs = []
    for i, entry in enumerate(doc["effects"]):
        if not isinstance(entry, dict) or set(entry) - {"kind", "params"}:
            raise ConfigError(f"effects[{i}] must be {{kind, params}}")
        if "kind" not in entry:
            raise ConfigError(f"effects[{i}] lacks 'kind'")
        defs.append((str(entry["kind"]), dict(entry.get("params", {}))))
    merged = dict(DATA_MANIFEST_DEFAULTS)
    for k in DATA_MANIFEST_DEFAULTS:
        if k in doc:
            merged[k] = doc[k]
    merged["effects"] = [{"kind": k, "params": p} for k, p in defs]
    return merged


def _cmd_gen_data(args) -> int:
    manifest = _parse_effect_manifest(args.effects)
    seed = _resolve_seed(args.seed)
    lock = _acquire(args.out, args.force)
    try:
        defs = [(e["kind"], e["params"]) for e in manifest["effects"]]
        registry = EffectRegistry.build(
            defs, seed, trigger_dim=int(manifest["trigger_dim"]),
            descriptor_dim=int(manifest["descriptor_dim"]),
            sigma_eff=float(manifest["sigma_eff"]))
        artifacts = []
        root = Rng(seed)
        for i in range(registry.n):
            ds = build_effect_dataset(registry.spec(i),
                                      int(manifest["pairs_per_effect"]),
                                      root.substream("data", "effect", i))
            fname = f"effect_{i:02d}.ndjson"
            save_dataset(ds, os.path.join(args.out, fname))
            artifacts.append(fname)
        general = build_general_dataset(int(manifest["general_size"]),
                                        root.substream("data", "general"))
        recon = reconstruction_pairs(general.x_src, root.substream("data", "recon"),
                                     float(manifest["recon_sigma"]))
        save_dataset(recon, os.path.join(args.out, "general.ndjson"))
        artifacts.append("general.ndjson")
        registry.save(os.path.join(args.out, "registry.json"))
        artifacts.append("registry.json")
        _finish(args.out, "gen-data", seed, {**manifest, "seed": seed}, artifacts)
    finally:
        os.remove(lock)
    return 0


# ---------------------------------------------------------------------------
# train


def _train_dispatch(args) -> int:
    if args.mode in ("teacher", "extend") and args.effect is None:
        raise ConfigError(f"train {args.mode} requires --effect")
    needs = {"base": ("data",),
             "teacher": ("data", "base"),
             "collection": ("data", "base", "teachers"),
             "extend": ("data", "base", "teachers", "student", "teacher_ckpt")}
    for attr in needs[args.mode]:
        if getattr(args, attr) is None:
            flag = "--teacher" if attr == "teacher_ckpt" else f"--{attr}"
            raise ConfigError(f"train {args.mode} requires {flag}")
    cfg = _load_train_config(args.config, args.seed)
    lock = _acquire(args.out, args.force)
    try:
        handler = {"base": _train_base, "teacher": _train_teacher,
                   "collection": _train_collection, "extend": _train_extend}
        artifacts = handler[args.mode](args, cfg)
        _finish(args.out, f"train {args.mode}", cfg.seed, cfg.to_json(), artifacts)
    finally:
        os.remove(lock)
    return 0


def _train_base(args, cfg: TrainConfig) -> list[str]:
    general = _load_general(args.data)
    if general.y is None:
        raise ConfigError("general.ndjson lacks reconstruction targets")
    net, log = train_base(cfg, general)
    save_model(net, os.path.join(args.out, "base.cfn"))
    _write_metrics_csv(os.path.join(args.out, "metrics.csv"), log)
    return ["base.cfn", "metrics.csv"]


def _train_teacher(args, cfg: TrainConfig) -> list[str]:
    registry = _load_registry(args.data)
    if not 0 <= args.effect < registry.n:
        raise ConfigError(f"--effect must be in [0, {registry.n})")
    base = load_model(args.base)
    pairs = load_dataset(os.path.join(args.data, f"effect_{args.effect:02d}.ndjson"),
                         tag=f"effect_{args.effect:02d}")
    adapter, log = train_teacher(base, registry.spec(args.effect), pairs, cfg)
    fname = f"effect_{args.effect:02d}.cfn"
    save_adapter(adapter, os.path.join(args.out, fname))
    _write_metrics_csv(os.path.join(args.out, "metrics.csv"), log)
    return [fname, "metrics.csv"]


def _train_collection(args, cfg: TrainConfig) -> list[str]:
    registry = _load_registry(args.data)
    base = load_model(args.base)
    bank = _load_bank(base, args.teachers)
    result = train_collection(base, bank, registry,
                              _load_effect_data(args.data, registry),
                              _load_general(args.data), cfg)
    save_adapter(result.student, os.path.join(args.out, "student.cfn"))
    save_adapter(result.critic_adapter, os.path.join(args.out, "critic.cfn"))
    _write_metrics_csv(os.path.join(args.out, "metrics.csv"), result.log)
    return ["student.cfn", "critic.cfn", "metrics.csv"]


def _train_extend(args, cfg: TrainConfig) -> list[str]:
    registry = _load_registry(args.data)
    if args.effect != registry.n - 1:
        raise ConfigError(
            f"--effect must name the registry's last entry ({registry.n - 1})")
    base = load_model(args.base)
    bank = _load_bank(base, args.teachers)
    student = load_adapter(args.student)
    new_teacher = load_adapter(args.teacher_ckpt)
    critic = load_adapter(args.critic) if args.critic else None
    result = extend_collection(base, bank, registry,
                               _load_effect_data(args.data, registry),
                               _load_general(args.data), student, new_teacher,
                               cfg, critic=critic)
    save_adapter(result.student, os.path.join(args.out, "student.cfn"))
    save_adapter(result.critic_adapter, os.path.join(args.out, "critic.cfn"))
    _write_metrics_csv(os.path.join(args.out, "metrics.csv"), result.log)
    return ["student.cfn", "critic.cfn", "metrics.csv"]


# ---------------------------------------------------------------------------
# sample


def _cmd_sample(args) -> int:
    seed = _resolve_seed(args.seed)
    registry = _load_registry(args.data)
    base = load_model(args.base)
    net = attach(base, load_adapter(args.adapter)) if args.adapter else base
    if args.effect is not None and not 0 <= args.effect < registry.n:
        raise ConfigError(f"--effect must be in [0, {registry.n})")
    prompt = (registry.general_prompt() if args.effect is None
              else registry.student_prompt(args.effect))
    rng = Rng(seed).substream("sample")
    sources = sample_sources(args.n, rng.substream("sources"))
    if args.euler is not None:
        sampler = make_euler_sampler(net, args.euler)
        nfe = args.euler
    else:
        schedule = _schedule_from(args.config)
        sampler = make_fewstep_sampler(net, schedule)
        nfe = schedule.n_steps
    outputs = sampler(sources, prompt, rng.substream("noise"))
    lock = _acquire(args.out, args.force)
    try:
        path = os.path.join(args.out, "samples.ndjson")
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            for i in range(len(sources)):
                row = {"effect": args.effect, "x_src": sources[i].tolist(),
                       "x_out": outputs[i].tolist(), "seed": seed, "nfe": nfe}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        os.replace(tmp, path)
        effective = {"command": "sample", "seed": seed, "n": args.n,
                     "effect": args.effect, "euler": args.euler, "nfe": nfe}
        _finish(args.out, "sample", seed, effective, ["samples.ndjson"])
    finally:
        os.remove(lock)
    return 0


# ---------------------------------------------------------------------------
# eval


def _parse_pairs(text: str, n: int) -> list[tuple[int, int]]:
    pairs = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ConfigError(f"bad pair {chunk!r}; expected 'a,b;a,b;...'")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise ConfigError(f"bad pair {chunk!r}; indices must be integers") from None
        if not (0 <= a < n and 0 <= b < n) or a == b:
            raise ConfigError(f"pair {chunk!r} out of range for {n} effects")
        pairs.append((a, b))
    if not pairs:
        raise ConfigError("no effect pairs given")
    return pairs


def _cmd_eval(args) -> int:
    seed = _resolve_seed(args.seed)
    registry = _load_registry(args.data)
    base = load_model(args.base)
    student = load_adapter(args.student)
    schedule = _schedule_from(args.config)
    sampler = make_fewstep_sampler(attach(base, student), schedule)
    rng = Rng(seed).substream("eval")
    sources = sample_sources(args.n, rng.substream("sources"))
    report = EvalReport(nfe=schedule.n_steps)
    extra: list[str] = []

    lock = _acquire(args.out, args.force)
    try:
        if args.suite == "fidelity":
            for i in range(registry.n):
                out = sampler(sources, registry.student_prompt(i),
                              rng.substream("sw", i))
                report.sw_per_effect[i] = sliced_wasserstein(
                    out, registry.apply(i, sources), rng=rng.substream("proj", i))
            if args.teachers:
                bank = _load_bank(base, args.teachers)
                for i in range(registry.n):
                    teacher = make_euler_sampler(
                        attach(base, bank.retrieve(f"effect_{i:02d}")),
                        TEACHER_EULER_STEPS)
                    out = teacher(sources, registry.teacher_prompt(i),
                                  rng.substream("teacher-sw", i))
                    report.teacher_sw_per_effect[i] = sliced_wasserstein(
                        out, registry.apply(i, sources),
                        rng=rng.substream("teacher-proj", i))
        elif args.suite == "bleed":
            bm = bleed_matrix(sampler, registry, sources, rng.substream("bleed"))
            report.trigger_rates = {i: float(r) for i, r in enumerate(bm.trigger_rates)}
            save_bleed_csv(bm, os.path.join(args.out, "bleed.csv"))
            extra.append("bleed.csv")
        elif args.suite == "bcr":
            for i in range(registry.n):
                report.bcr_per_effect[i] = bcr_analog(
                    sampler, registry, i, sources, rng.substream("bcr", i),
                    rho=args.rho)
        elif args.suite == "ood":
            annulus = sample_annulus(args.n, rng.substream("annulus"))
            for i in range(registry.n):
                report.ood_bcr_per_effect[i] = ood_eval(
                    sampler, registry, i, annulus, rng.substream("ood", i),
                    rho=args.rho)
        else:  # compose
            for a, b in _parse_pairs(args.pairs, registry.n):
                report.compositions.append(composition_score(
                    sampler, registry, a, b, sources, rng.substream("compose", a, b)))
        written = report.save(args.out, stem="report")
        artifacts = [os.path.basename(p) for p in written] + extra
        effective = {"command": "eval", "suite": args.suite, "seed": seed,
                     "n": args.n, "rho": args.rho, "pairs": args.pairs}
        _finish(args.out, "eval", seed, effective, artifacts)
    finally:
        os.remove(lock)
    return 0


# ---------------------------------------------------------------------------
# deploy-sim


def _cmd_deploy_sim(args) -> int:
    doc = _read_json_file(args.config, "deploy config")
    allowed = {"n_effects", "effects_per_collection", "per_lora_storage",
               "load_latency", "trace_length", "seed"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown deploy config keys: {sorted(unknown)}")
    if "n_effects" not in doc:
        raise ConfigError("deploy config needs 'n_effects' (int or list of ints)")
    ns = doc["n_effects"]
    if isinstance(ns, int):
        ns = [ns]
    if (not isinstance(ns, list) or not ns
            or not all(isinstance(v, int) for v in ns)):
        raise ConfigError("'n_effects' must be an int or non-empty list of ints")
    seed = _resolve_seed(args.seed, doc.get("seed"))
    length = int(doc.get("trace_length", 200))
    kwargs = {k: doc[k] for k in
              ("effects_per_collection", "per_lora_storage", "load_latency")
              if k in doc}
    reports = []
    for n in ns:
        trace = synth_trace(n, length, Rng(seed).substream("deploy", n))
        reports.append(simulate(DeployConfig(n_effects=n, trace=trace, **kwargs)))
    lock = _acquire(args.out, args.force)
    try:
        with open(os.path.join(args.out, "costs.csv"), "w", newline="") as fh:
            csv.writer(fh).writerows(cost_table(reports))
        _write_json(os.path.join(args.out, "costs.json"),
                    [r.to_json() for r in reports])
        effective = {**doc, "n_effects": ns, "seed": seed, "trace_length": length}
        _finish(args.out, "deploy-sim", seed, effective,
                ["costs.csv", "costs.json"])
    finally:
        os.remove(lock)
    return 0


# ---------------------------------------------------------------------------
# ablate


def _cmd_ablate(args) -> int:
    overrides = ABLATION_PRESETS[args.preset]
    cfg = _load_train_config(args.config, args.seed).with_overrides(**overrides)
    registry = _load_registry(args.data)
    base = load_model(args.base)
    bank = _load_bank(base, args.teachers)

    equality_checks = 0

    def _watch(ev: StepEvent) -> None:
        nonlocal equality_checks
        if args.preset == "no-aop" and ev.stream == "effect":
            if not np.array_equal(ev.c_student.vector, ev.c_teacher.vector):
                raise RuntimeError("no-aop preset produced distinct prompts")
            equality_checks += 1

    lock = _acquire(args.out, args.force)
    try:
        result = train_collection(base, bank, registry,
                                  _load_effect_data(args.data, registry),
                                  _load_general(args.data), cfg,
                                  callback=_watch)
        sampler = make_fewstep_sampler(attach(base, result.student),
                                       Schedule(cfg.schedule))
        rng = Rng(cfg.seed).substream("ablate-eval")
        sources = sample_sources(args.n, rng.substream("sources"))
        annulus = sample_annulus(args.n, rng.substream("annulus"))
        bm = bleed_matrix(sampler, registry, sources, rng.substream("bleed"))
        sw, vu, ood = {}, {}, {}
        for i in range(registry.n):
            out = sampler(sources, registry.student_prompt(i),
                          rng.substream("sw", i))
            targets = registry.apply(i, sources)
            sw[i] = sliced_wasserstein(out, targets, rng=rng.substream("proj", i))
            vu[i] = max(0.0, float(np.trace(np.cov(targets.T))
                                   - np.trace(np.cov(out.T))))
            ood[i] = ood_eval(sampler, registry, i, annulus,
                              rng.substream("ood", i), rho=args.rho)
        summary = {
            "preset": args.preset,
            "overrides": overrides,
            "trigger_rate": bm.overall_trigger_rate,
            "sw_per_effect": sw,
            "variance_underestimation_per_effect": vu,
            "ood_bcr_per_effect": ood,
            "sw_mean": float(np.mean(list(sw.values()))),
            "variance_underestimation_mean": float(np.mean(list(vu.values()))),
            "ood_bcr_mean": float(np.mean(list(ood.values()))),
        }
        if args.preset == "no-aop":
            summary["prompt_equality_checks"] = equality_checks
        save_adapter(result.student, os.path.join(args.out, "student.cfn"))
        _write_metrics_csv(os.path.join(args.out, "metrics.csv"), result.log)
        _write_json(os.path.join(args.out, "ablation.json"), summary)
        _finish(args.out, "ablate", cfg.seed,
                {**cfg.to_json(), "preset": args.preset},
                ["student.cfn", "metrics.csv", "ablation.json"])
    finally:
        os.remove(lock)
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fxdistill",
        description="Multi-effect distillation workbench: data, training, "
                    "evaluation, deployment simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (falls back to ${SEED_ENV}, then config)")
        p.add_argument("--force", action="store_true",
                       help="overwrite a completed run in --out")

    p = sub.add_parser("gen-data", help="materialise datasets and registry")
    p.add_argument("--effects", required=True, help="effect manifest JSON")
    common(p)

    p = sub.add_parser("train", help="fit base, teacher, collection, or extension")
    p.add_argument("mode", choices=("base", "teacher", "collection", "extend"))
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--data", help="gen-data output directory")
    p.add_argument("--base", help="base model checkpoint (.cfn)")
    p.add_argument("--teachers", help="directory of teacher adapters")
    p.add_argument("--student", help="student adapter to extend (.cfn)")
    p.add_argument("--teacher", dest="teacher_ckpt",
                   help="new-effect teacher adapter for extend (.cfn)")
    p.add_argument("--critic", help="critic adapter to warm-start extend (.cfn)")
    p.add_argument("--effect", type=int, default=None,
                   help="effect index (teacher/extend)")
    common(p)

    p = sub.add_parser("sample", help="dump model outputs as NDJSON")
    p.add_argument("--base", required=True)
    p.add_argument("--adapter", help="optional adapter to attach (.cfn)")
    p.add_argument("--data", required=True, help="directory with registry.json")
    p.add_argument("--effect", type=int, default=None,
                   help="effect index; omit for the general prompt")
    p.add_argument("-n", type=int, default=256, help="number of samples")
    p.add_argument("--euler", type=int, default=None,
                   help="use an Euler sampler with this many steps")
    p.add_argument("--config", help="config JSON supplying the few-step schedule")
    common(p)

    p = sub.add_parser("eval", help="score a student under one suite")
    p.add_argument("--student", required=True, help="student adapter (.cfn)")
    p.add_argument("--base", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--suite", required=True,
                   choices=("fidelity", "bleed", "bcr", "ood", "compose"))
    p.add_argument("--teachers", help="teacher dir for reference distances")
    p.add_argument("--pairs", default="0,2;1,2;1,3",
                   help="compose suite pairs, 'a,b;a,b;...'")
    p.add_argument("--rho", type=float, default=None,
                   help="radius for bcr/ood suites (default 3*sigma_eff)")
    p.add_argument("-n", type=int, default=500, help="evaluation sources")
    p.add_argument("--config", help="config JSON supplying the few-step schedule")
    common(p)

    p = sub.add_parser("deploy-sim", help="tabulate serving costs")
    p.add_argument("--config", required=True, help="deploy config JSON")
    common(p)

    p = sub.add_parser("ablate", help="collection run with one component disabled")
    p.add_argument("--preset", required=True, choices=sorted(ABLATION_PRESETS))
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--teachers", required=True)
    p.add_argument("--rho", type=float, default=None,
                   help="radius for the OOD metric (default 3*sigma_eff)")
    p.add_argument("-n", type=int, default=400, help="evaluation sources")
    common(p)

    return parser


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _train_dispatch,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "deploy-sim": _cmd_deploy_sim,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, SerializationError, RetrievalError, UsageError,
            FileNotFoundError) as e:
        print(f"fxdistill: usage error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"fxdistill: aborted: {e}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError) as e:
        print(f"fxdistill: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
