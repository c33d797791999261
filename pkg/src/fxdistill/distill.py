"""The training engine: base and teacher flow matching, distribution
matching distillation with a trainable critic, two-stream routing, the
coarse-to-fine composite objective, the full collection loop, and
incremental extension.

Stream routing: each generator step draws p ~ U(0,1) and runs exactly one
stream. The general stream (p >= p_switch) regularizes rollouts against the
frozen base on unlabeled sources. The effect stream picks one teacher and
applies the composite objective: paired flow matching pulls the student
toward the teacher's targets coarsely, target-simulated distribution
matching refines near the data manifold (noise depth capped at tau_max,
critic noise floored at tau_min), and rollout distribution matching keeps
the student's own sampling path on distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .autodiff import Tensor, no_grad
from .effects import EffectRegistry, PairDataset, apply_effect, sample_sources
from .errors import ConfigError, TrainingDiverged
from .flow import (Schedule, backward_simulate, denoise_estimate, fewstep_sample,
                   fm_loss, interpolate, target_simulate)
from .lora import AdaptedNet, LoraAdapter, LoraBank, attach, merge
from .nets import VectorFieldNet
from .optim import Adam
from .prompts import PromptEmb, general_prompt, teacher_prompt
from .rng import Rng

Array = np.ndarray

U_GEN_MIN = 0.05
U_C_MIN = 0.02
U_C_MAX = 0.98

GENERAL = "general"
EFFECT = "effect"


@dataclass
class TrainConfig:
    """Every knob for base, teacher, collection, and extension training."""

    seed: int = 0
    # architecture
    hidden: int = 128
    depth: int = 3
    activation: str = "silu"
    trigger_dim: int = 16
    descriptor_dim: int = 16
    # adapters
    rank: int = 4
    alpha: float = 1.0
    critic_rank: int | None = None
    # optimization
    lr: float = 1e-4
    critic_lr: float | None = None
    lr_final_frac: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch: int = 32
    base_steps: int = 4000
    teacher_steps: int = 2000
    collection_gen_steps: int = 5000
    extend_gen_steps: int = 100
    critic_per_gen: int = 5
    # routing and objective
    p_switch: float = 0.5
    tau_min: float = 0.50
    tau_max: float = 0.75
    w_paired_fm: float = 1.0
    w_target_sim: float = 1.0
    w_rollout: float = 1.0
    split_prompts: bool = True
    # sampling and data
    schedule: tuple[float, ...] = (1.0, 0.75, 0.5, 0.25)
    recon_sigma: float = 0.05
    pairs_per_effect: int = 20
    general_size: int = 2000
    extend_new_weight: float = 0.5
    # bookkeeping
    log_every: int = 250
    checkpoint_every: int = 1000
    eval_points: int = 200

    def __post_init__(self):
        self.schedule = tuple(float(f) for f in self.schedule)
        Schedule(self.schedule)
        if not 0.0 <= self.p_switch <= 1.0:
            raise ConfigError("p_switch must lie in [0, 1]")
        if not 0.0 < self.tau_min < self.tau_max < 1.0:
            raise ConfigError("need 0 < tau_min < tau_max < 1")
        for name in ("base_steps", "teacher_steps", "collection_gen_steps",
                     "extend_gen_steps", "critic_per_gen"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("hidden", "depth", "rank", "batch", "trigger_dim",
                     "descriptor_dim", "log_every", "checkpoint_every",
                     "pairs_per_effect", "general_size", "eval_points"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.critic_lr is not None and self.critic_lr <= 0:
            raise ConfigError("critic_lr must be positive when set")
        if self.critic_rank is not None and self.critic_rank < 1:
            raise ConfigError("critic_rank must be >= 1 when set")
        if not 0.0 < self.lr_final_frac <= 1.0:
            raise ConfigError("lr_final_frac must lie in (0, 1]")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ConfigError("adam betas must lie in [0, 1)")
        if not 0.0 <= self.extend_new_weight <= 1.0:
            raise ConfigError("extend_new_weight must lie in [0, 1]")
        if self.recon_sigma < 0:
            raise ConfigError("recon_sigma must be >= 0")

    @property
    def prompt_dim(self) -> int:
        return self.trigger_dim + self.descriptor_dim

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kwargs = dict(d)
        if "schedule" in kwargs:
            kwargs["schedule"] = tuple(kwargs["schedule"])
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"bad config: {e}") from e

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


def _lr_scale(config: TrainConfig, step: int, total: int) -> float:
    """Linear decay factor from 1 at step 1 to lr_final_frac at step == total."""
    if total <= 1:
        return 1.0
    return 1.0 - (1.0 - config.lr_final_frac) * ((step - 1) / (total - 1))


def route_stream(p: float, p_switch: float) -> str:
    """Pick the stream for one step: general iff p >= p_switch."""
    return GENERAL if p >= p_switch else EFFECT


@dataclass
class ScoreStats:
    """Per-batch byproducts of one score-difference evaluation."""

    x0_real: Array
    x0_fake: Array
    direction: Array
    weight: float

    @property
    def gap_norms(self) -> Array:
        return np.linalg.norm(self.x0_fake - self.x0_real, axis=1)


def score_direction(x_g: Array, x_src: Array, c_student: PromptEmb,
                    c_teacher: PromptEmb, real_net, fake_net, u_c,
                    eps: Array) -> tuple[Array, ScoreStats]:
    """Gradient-free half of the distribution-matching update.

    Noises the generated batch to u_c, reads clean-point estimates from the
    frozen real net (teacher conditioning) and the critic (student
    conditioning), and returns the regression target x_g - w * g, where
    g = x0_fake - x0_real and w = 1 / (mean |x0_real - x_g| + 1e-3).
    """
    x_g = np.asarray(x_g, dtype=np.float64)
    with no_grad():
        x_t = interpolate(x_g, eps, u_c)
        v_real = real_net(x_t, u_c, x_src, c_teacher)
        v_fake = fake_net(x_t, u_c, x_src, c_student)
        x0_real = denoise_estimate(x_t, u_c, v_real.data)
        x0_fake = denoise_estimate(x_t, u_c, v_fake.data)
    g = x0_fake - x0_real
    w = 1.0 / (float(np.abs(x0_real - x_g).mean()) + 1e-3)
    target = x_g - w * g
    return target, ScoreStats(x0_real, x0_fake, g, w)


def dmd_surrogate_loss(x_g: Tensor, x_src: Array, c_student: PromptEmb,
                       c_teacher: PromptEmb, real_net, fake_net, u_c,
                       rng: Rng) -> Tensor:
    """Stop-gradient surrogate for distribution matching distillation.

    Returns 0.5 * mean-over-batch ||x_g - detach(x_g - w * g)||^2, whose
    gradient with respect to the generator is w * g routed through x_g; the
    score nets never receive gradients.
    """
    n = x_g.shape[0]
    eps = rng.normal((n, 2))
    target, _ = score_direction(x_g.data, x_src, c_student, c_teacher,
                                real_net, fake_net, u_c, eps)
    diff = x_g - target
    return 0.5 * ((diff * diff).sum() / n)


@dataclass
class DistillState:
    """Everything the collection loop mutates, bundled for inspection."""

    base: VectorFieldNet
    student: LoraAdapter
    critic_adapter: LoraAdapter
    generator: AdaptedNet
    critic: AdaptedNet
    schedule: Schedule
    config: TrainConfig
    gen_opt: Adam
    critic_opt: Adam
    step: int = 0
    log: list[dict] = field(default_factory=list)


def rollout_dmd_loss(state: DistillState, x_src: Array, c_student: PromptEmb,
                     c_teacher: PromptEmb, real_net, rng: Rng) -> Tensor:
    """Distribution matching on the student's own sampling path.

    The critic noise level u_c spans the full (0.02, 0.98) range; the
    tau bounds constrain only the target-simulation loss.
    """
    sim = backward_simulate(state.generator, state.schedule, x_src, c_student, rng)
    u_c = rng.uniform(U_C_MIN, U_C_MAX, x_src.shape[0])
    return dmd_surrogate_loss(sim.x_g, x_src, c_student, c_teacher,
                              real_net, state.critic, u_c, rng)


def target_sim_dmd_loss(state: DistillState, y: Array, x_src: Array,
                        c_student: PromptEmb, c_teacher: PromptEmb,
                        real_net, rng: Rng) -> Tensor:
    """Distribution matching at partially re-generated real targets.

    y is noised to u_gen ~ U(0.05, tau_max), denoised once by the generator
    (gradients flow), then judged at u_c ~ U(tau_min, 0.98). The cap keeps
    the simulated point near the data manifold; the floor keeps the critic
    comparison in a high-noise band where score gaps stay visible.
    """
    cfg = state.config
    n = y.shape[0]
    u_gen = rng.uniform(U_GEN_MIN, cfg.tau_max, n)
    y_hat = target_simulate(state.generator, y, x_src, c_student, u_gen, rng)
    u_c = rng.uniform(cfg.tau_min, U_C_MAX, n)
    return dmd_surrogate_loss(y_hat, x_src, c_student, c_teacher,
                              real_net, state.critic, u_c, rng)


def paired_fm_loss(state: DistillState, y: Array, x_src: Array,
                   c_student: PromptEmb, rng: Rng) -> Tensor:
    """Plain flow matching on teacher pairs under the student's prompt."""
    n = y.shape[0]
    u = rng.uniform(0.0, 1.0, n)
    eps = rng.normal((n, 2))
    return fm_loss(state.generator, y, x_src, c_student, u, eps)


def critic_update(state: DistillState, x_g: Array, x_src: Array,
                  c_student: PromptEmb, rng: Rng) -> float:
    """One critic step: flow matching toward the detached fake batch."""
    y = np.asarray(x_g, dtype=np.float64)
    n = y.shape[0]
    u = rng.uniform(0.0, 1.0, n)
    eps = rng.normal((n, 2))
    loss = fm_loss(state.critic, y, x_src, c_student, u, eps)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite critic loss at step {state.step}")
    loss.backward()
    state.critic_opt.step()
    state.critic_opt.zero_grad()
    return value


@dataclass
class StepEvent:
    """Per-step instrumentation handed to callbacks."""

    step: int
    stream: str
    effect_id: int | None
    losses: dict[str, float]
    c_student: PromptEmb | None
    c_teacher: PromptEmb | None


def _running_update(acc: dict[str, list[float]], losses: dict[str, float]) -> None:
    for k, v in losses.items():
        acc.setdefault(k, []).append(v)


def train_base(config: TrainConfig, general_pairs: PairDataset,
               callback: Callable[[dict], None] | None = None
               ) -> tuple[VectorFieldNet, list[dict]]:
    """Full-parameter flow matching on reconstruction pairs."""
    if general_pairs.y is None:
        raise ConfigError("base training needs reconstruction targets; "
                          "build them with reconstruction_pairs()")
    rng = Rng(config.seed).substream("base")
    net = VectorFieldNet.create(rng.substream("init"), config.prompt_dim,
                                config.hidden, config.depth, config.activation)
    net.set_trainable(True)
    opt = Adam(net.parameters(), lr=config.lr,
               betas=(config.adam_beta1, config.adam_beta2))
    c = general_prompt(config.trigger_dim, config.descriptor_dim)
    n_data = len(general_pairs)
    log: list[dict] = []
    acc: list[float] = []
    for step in range(1, config.base_steps + 1):
        opt.lr = config.lr * _lr_scale(config, step, config.base_steps)
        idx = rng.integers(0, n_data, config.batch)
        x_src = general_pairs.x_src[idx]
        y = general_pairs.y[idx]
        u = rng.uniform(0.0, 1.0, config.batch)
        eps = rng.normal((config.batch, 2))
        loss = fm_loss(net, y, x_src, c, u, eps)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite base loss at step {step}")
        loss.backward()
        opt.step()
        opt.zero_grad()
        acc.append(value)
        if step % config.log_every == 0:
            row = {"step": step, "loss": float(np.mean(acc))}
            acc = []
            log.append(row)
            if callback:
                callback(row)
    net.set_trainable(False)
    return net, log


def train_teacher(base: VectorFieldNet, spec, pairs: PairDataset,
                  config: TrainConfig,
                  callback: Callable[[dict], None] | None = None
                  ) -> tuple[LoraAdapter, list[dict]]:
    """Adapter-only flow matching on one effect's few-shot pairs."""
    if pairs.y is None:
        raise ConfigError("teacher training needs paired targets")
    base.set_trainable(False)
    rng = Rng(config.seed).substream("teacher", spec.id)
    adapter = LoraAdapter.create(base, rng.substream("init"), config.rank,
                                 config.alpha, name=f"effect_{spec.id:02d}")
    adapter.set_trainable(True)
    net = attach(base, adapter)
    opt = Adam(adapter.parameters(), lr=config.lr,
               betas=(config.adam_beta1, config.adam_beta2))
    c = teacher_prompt(spec, config.trigger_dim, config.descriptor_dim)
    n_data = len(pairs)
    log: list[dict] = []
    acc: list[float] = []
    for step in range(1, config.teacher_steps + 1):
        opt.lr = config.lr * _lr_scale(config, step, config.teacher_steps)
        idx = rng.integers(0, n_data, config.batch)
        x_src = pairs.x_src[idx]
        y = pairs.y[idx]
        u = rng.uniform(0.0, 1.0, config.batch)
        eps = rng.normal((config.batch, 2))
        loss = fm_loss(net, y, x_src, c, u, eps)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(
                f"non-finite teacher loss at step {step} (effect {spec.id})")
        loss.backward()
        opt.step()
        opt.zero_grad()
        acc.append(value)
        if step % config.log_every == 0:
            row = {"step": step, "loss": float(np.mean(acc))}
            acc = []
            log.append(row)
            if callback:
                callback(row)
    adapter.set_trainable(False)
    return adapter, log


@dataclass
class CollectionResult:
    student: LoraAdapter
    critic_adapter: LoraAdapter
    log: list[dict]
    state: DistillState


def _init_state(base: VectorFieldNet, config: TrainConfig, rng: Rng,
                student: LoraAdapter | None = None,
                critic: LoraAdapter | None = None) -> DistillState:
    base.set_trainable(False)
    if student is None:
        student = LoraAdapter.create(base, rng.substream("student-init"),
                                     config.rank, config.alpha, name="student")
    student.set_trainable(True)
    if critic is None:
        critic_adapter = LoraAdapter.create(
            base, rng.substream("critic-init"),
            config.rank if config.critic_rank is None else config.critic_rank,
            config.alpha, name="critic")
    else:
        critic_adapter = critic
    critic_adapter.set_trainable(True)
    return DistillState(
        base=base,
        student=student,
        critic_adapter=critic_adapter,
        generator=attach(base, student),
        critic=attach(base, critic_adapter),
        schedule=Schedule(config.schedule),
        config=config,
        gen_opt=Adam(student.parameters(), lr=config.lr,
                     betas=(config.adam_beta1, config.adam_beta2)),
        critic_opt=Adam(critic_adapter.parameters(),
                        lr=config.lr if config.critic_lr is None else config.critic_lr,
                        betas=(config.adam_beta1, config.adam_beta2)),
    )


def _pick_effect(probs: Array, rng: Rng) -> int:
    return int(np.searchsorted(np.cumsum(probs), rng.uniform(), side="right"))


def _distill_loop(state: DistillState, registry: EffectRegistry,
                  effect_data: list[PairDataset], general_sources: Array,
                  real_nets: list[VectorFieldNet], effect_probs: Array,
                  steps: int, rng: Rng,
                  callback: Callable[[StepEvent], None] | None) -> None:
    cfg = state.config
    c_gen = registry.general_prompt()
    c_tea = [registry.teacher_prompt(i) for i in range(registry.n)]
    c_stu = [registry.student_prompt(i) if cfg.split_prompts else c_tea[i]
             for i in range(registry.n)]
    eval_rng = rng.substream("eval")
    eval_sources = None
    acc: dict[str, list[float]] = {}
    stream_counts = {GENERAL: 0, EFFECT: 0}
    lr0_gen, lr0_critic = state.gen_opt.lr, state.critic_opt.lr

    def periodic_eval(step: int) -> dict[str, float]:
        nonlocal eval_sources
        from .metrics import sliced_wasserstein

        if eval_sources is None:
            eval_sources = sample_sources(cfg.eval_points, eval_rng.substream("sources"))
        out = {}
        for i in range(registry.n):
            srng = eval_rng.substream("run", step, i)
            samples = fewstep_sample(state.generator, state.schedule,
                                     eval_sources, c_stu[i], srng)
            targets = apply_effect(registry.spec(i), eval_sources)
            out[f"sw_{i}"] = sliced_wasserstein(samples, targets,
                                                rng=srng.substream("sw"))
        return out

    for k in range(steps):
        state.step += 1
        scale = _lr_scale(cfg, k + 1, steps)
        state.gen_opt.lr = lr0_gen * scale
        state.critic_opt.lr = lr0_critic * scale
        p = float(rng.uniform())
        stream = route_stream(p, cfg.p_switch)
        stream_counts[stream] += 1
        losses: dict[str, float] = {}
        if stream == EFFECT:
            i = _pick_effect(effect_probs, rng)
            ds = effect_data[i]
            idx = rng.integers(0, len(ds), cfg.batch)
            x_src = ds.x_src[idx]
            y = ds.y[idx]
            cs, ct = c_stu[i], c_tea[i]
            real_net = real_nets[i]
            effect_id: int | None = i
            total: Tensor | None = None
            if cfg.w_paired_fm != 0.0:
                term = paired_fm_loss(state, y, x_src, cs, rng) * cfg.w_paired_fm
                losses["paired_fm"] = float(term.data)
                total = term
            if cfg.w_target_sim != 0.0:
                term = target_sim_dmd_loss(state, y, x_src, cs, ct, real_net, rng) * cfg.w_target_sim
                losses["target_sim"] = float(term.data)
                total = term if total is None else total + term
            if cfg.w_rollout != 0.0:
                term = rollout_dmd_loss(state, x_src, cs, ct, real_net, rng) * cfg.w_rollout
                losses["rollout"] = float(term.data)
                total = term if total is None else total + term
        else:
            idx = rng.integers(0, general_sources.shape[0], cfg.batch)
            x_src = general_sources[idx]
            ds = None
            cs = ct = c_gen
            real_net = state.base
            effect_id = None
            total = None
            if cfg.w_rollout != 0.0:
                term = rollout_dmd_loss(state, x_src, c_gen, c_gen, state.base, rng) * cfg.w_rollout
                losses["rollout"] = float(term.data)
                total = term
        if total is not None:
            value = float(total.data)
            if not np.isfinite(value):
                where = f"effect {effect_id}" if effect_id is not None else "general stream"
                raise TrainingDiverged(
                    f"non-finite loss at step {state.step} ({where}): {losses}")
            losses["total"] = value
            total.backward()
            state.gen_opt.step()
            state.gen_opt.zero_grad()
        for _ in range(cfg.critic_per_gen):
            if stream == EFFECT:
                idx2 = rng.integers(0, len(ds), cfg.batch)
                xs = ds.x_src[idx2]
            else:
                idx2 = rng.integers(0, general_sources.shape[0], cfg.batch)
                xs = general_sources[idx2]
            with no_grad():
                sim = backward_simulate(state.generator, state.schedule, xs, cs, rng)
            critic_update(state, sim.x_g.data, xs, cs, rng)
        _running_update(acc, losses)
        if callback:
            callback(StepEvent(step=state.step, stream=stream, effect_id=effect_id,
                               losses=dict(losses), c_student=cs, c_teacher=ct))
        if state.step % cfg.log_every == 0:
            row: dict = {"step": state.step, "stream_general": stream_counts[GENERAL],
                         "stream_effect": stream_counts[EFFECT]}
            for k, vals in acc.items():
                row[f"loss_{k}"] = float(np.mean(vals))
            acc = {}
            row.update(periodic_eval(state.step))
            state.log.append(row)


def _teacher_nets(base: VectorFieldNet, bank: LoraBank, n: int) -> list[VectorFieldNet]:
    """Frozen teachers as merged standalone nets (cheaper per forward)."""
    nets = []
    for i in range(n):
        net = merge(base, bank.retrieve(f"effect_{i:02d}"))
        net.set_trainable(False)
        nets.append(net)
    return nets


def train_collection(base: VectorFieldNet, bank: LoraBank, registry: EffectRegistry,
                     effect_data: list[PairDataset], general_data: PairDataset,
                     config: TrainConfig,
                     callback: Callable[[StepEvent], None] | None = None
                     ) -> CollectionResult:
    """Distill all bank teachers into one student adapter."""
    if len(effect_data) != registry.n:
        raise ConfigError("need one paired dataset per registry effect")
    for i, ds in enumerate(effect_data):
        if ds.y is None:
            raise ConfigError(f"effect dataset {i} lacks targets")
    if registry.prompt_dim != base.prompt_dim:
        raise ConfigError("registry prompt width does not match the base net")
    rng = Rng(config.seed).substream("collection")
    state = _init_state(base, config, rng)
    real_nets = _teacher_nets(base, bank, registry.n)
    probs = np.full(registry.n, 1.0 / registry.n)
    _distill_loop(state, registry, effect_data, general_data.x_src,
                  real_nets, probs, config.collection_gen_steps, rng, callback)
    state.student.set_trainable(False)
    state.critic_adapter.set_trainable(False)
    return CollectionResult(state.student, state.critic_adapter, state.log, state)


def extend_collection(base: VectorFieldNet, bank: LoraBank, registry: EffectRegistry,
                      effect_data: list[PairDataset], general_data: PairDataset,
                      student: LoraAdapter, new_teacher: LoraAdapter,
                      config: TrainConfig,
                      callback: Callable[[StepEvent], None] | None = None,
                      critic: LoraAdapter | None = None) -> CollectionResult:
    """Fold one more effect into an existing student with a short run.

    The registry and datasets must already include the new effect as their
    last entry. The new effect is sampled with probability extend_new_weight;
    the old N effects share the remainder uniformly. The input student is not
    mutated; a trained copy is returned. Passing the critic from the original
    collection run warm-starts the score branch; a fresh critic would spend
    the short budget re-estimating the student distribution and push biased
    directions into well-trained effects meanwhile.
    """
    n_total = registry.n
    n_old = n_total - 1
    if n_old < 0 or len(effect_data) != n_total:
        raise ConfigError("registry/datasets must include the new effect last")
    expected = f"effect_{n_old:02d}"
    if new_teacher.name != expected:
        raise ConfigError(f"new teacher must be named {expected!r}, got {new_teacher.name!r}")
    rng = Rng(config.seed).substream("extend")
    state = _init_state(base, config, rng, student=student.copy(),
                        critic=None if critic is None else critic.copy())
    real_nets = _teacher_nets(base, bank, n_old)
    merged_new = merge(base, new_teacher)
    merged_new.set_trainable(False)
    real_nets.append(merged_new)
    if n_old == 0:
        probs = np.array([1.0])
    else:
        probs = np.full(n_total, (1.0 - config.extend_new_weight) / n_old)
        probs[-1] = config.extend_new_weight
    _distill_loop(state, registry, effect_data, general_data.x_src,
                  real_nets, probs, config.extend_gen_steps, rng, callback)
    state.student.set_trainable(False)
    state.critic_adapter.set_trainable(False)
    return CollectionResult(state.student, state.critic_adapter, state.log, state)


def branch_gap_stats(state: DistillState, y: Array, x_src: Array,
                     c_student: PromptEmb, c_teacher: PromptEmb, real_net,
                     rng: Rng, constrained: bool = True) -> dict[str, float]:
    """Mean ||x0_fake - x0_real|| per simulation branch, gradient-free.

    With constrained=False the tau bounds are lifted (u_gen up to 0.98, u_c
    from 0.02), mirroring the loss definitions with constraints removed. The
    rollout branch always uses its own unconstrained u_c range.
    """
    cfg = state.config
    n = y.shape[0]
    u_gen_hi = cfg.tau_max if constrained else U_C_MAX
    u_c_lo = cfg.tau_min if constrained else U_C_MIN
    with no_grad():
        u_gen = rng.uniform(U_GEN_MIN, u_gen_hi, n)
        y_hat = target_simulate(state.generator, y, x_src, c_student, u_gen, rng)
        u_c_ts = rng.uniform(u_c_lo, U_C_MAX, n)
        _, ts = score_direction(y_hat.data, x_src, c_student, c_teacher,
                                real_net, state.critic, u_c_ts, rng.normal((n, 2)))
        sim = backward_simulate(state.generator, state.schedule, x_src, c_student, rng)
        u_c_bs = rng.uniform(U_C_MIN, U_C_MAX, n)
        _, bs = score_direction(sim.x_g.data, x_src, c_student, c_teacher,
                                real_net, state.critic, u_c_bs, rng.normal((n, 2)))
    return {
        "target_sim": float(ts.gap_norms.mean()),
        "rollout": float(bs.gap_norms.mean()),
    }
