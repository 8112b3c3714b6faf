"""Deterministic training loop wiring adapters, metrics, and allocation.

A run is a pure function of its TrainConfig: the seed is split into
independent streams (model init, task/teacher, batch sampling, expansion
vectors) via SeedSequence spawning, so identical configs produce
byte-identical traces, metrics, and checkpoints.

Step order: sample batch, forward, loss, divergence check, backward,
sensitivity EMA update (when that metric is active), optimizer step, then —
at allocation steps with nonzero budget — score, select, apply, and sync the
optimizer state to the new ranks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .allocator import ALLOCATOR_MODES, BudgetSchedule, apply_allocation, select_candidates
from .adapter import InitStrategy
from .errors import DivergenceError, ParameterError
from .importance import MetricKind, SensitivityState, score_all, sensitivity_update
from .model import LayerSpec, ToyModel, build_model
from .optim import AdamW
from .tasks import SyntheticTask, build_teacher, sample_blobs, sample_regression

__all__ = [
    "OptimizerConfig",
    "TrainConfig",
    "TrainResult",
    "run_training",
    "metrics_csv_lines",
]

TRACE_VERSION = 1

# Training aborts when the loss blows past this multiple of its first value.
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        # Range checks live in AdamW; building one validates the config.
        AdamW(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def build(self):
        return AdamW(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run depends on; frozen and array-free by construction."""

    name: str
    seed: int
    layers: tuple[LayerSpec, ...]
    loss: str
    task: SyntheticTask
    optimizer: OptimizerConfig
    schedule: BudgetSchedule
    metric: MetricKind
    mode: str = "bidirectional"
    init_strategy: InitStrategy = InitStrategy("zero_impact")
    regularizer_weight: float = 0.1
    batch_size: int = 32
    log_every: int = 50
    output_dir: str | None = None

    def __post_init__(self):
        if not self.name:
            raise ParameterError("name must be non-empty")
        if self.mode not in ALLOCATOR_MODES:
            raise ParameterError(f"unknown allocator mode {self.mode!r}")
        if not self.regularizer_weight >= 0.0:
            raise ParameterError("regularizer_weight must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.log_every < 1:
            raise ParameterError("log_every must be >= 1")
        if not self.layers:
            raise ParameterError("layers must be non-empty")

    def fingerprint(self):
        """Deterministic hash of the config (nested dataclass repr).

        ``output_dir`` is excluded: where artifacts land does not change a
        single computed number, so redirecting a rerun must not change its
        config hash.
        """
        content = replace(self, output_dir=None)
        return hashlib.sha256(repr(content).encode("utf-8")).hexdigest()


@dataclass
class TrainResult:
    model: ToyModel
    header: dict
    events: list
    metrics: list
    final_loss: float
    dataset: object = None
    teacher: object = None
    diverged: bool = False
    abort: dict | None = None


def _trace_header(config, model):
    depths = model.adapter_depths()
    sched = config.schedule
    return {
        "type": "header",
        "version": TRACE_VERSION,
        "name": config.name,
        "seed": config.seed,
        "config_hash": config.fingerprint(),
        "mode": config.mode,
        "metric": config.metric.variant,
        "init_strategy": config.init_strategy.variant,
        "schedule": {
            "b0": sched.b0,
            "t_warmup": sched.t_warmup,
            "t_final": sched.t_final,
            "total_steps": sched.total_steps,
            "delta_t": sched.delta_t,
        },
        "adapters": [
            {"id": a.id, "r_init": a.r_init, "r_max": a.r_max, "depth": depths[a.id]}
            for a in model.adapters()
        ],
    }


def _metrics_row(step, loss, model):
    row = {
        "step": step,
        "loss": loss,
        "total_rank": sum(a.rank for a in model.adapters()),
        "param_count": model.param_count(),
    }
    for a in model.adapters():
        row[f"rank_{a.id}"] = a.rank
    return row


def run_training(config, observer=None):
    """Execute one run; returns a TrainResult.

    ``observer``, when given, is called as observer(step, phase, model, info)
    with phase "pre_allocation" (info: prune/expand id lists and the report)
    and "post_allocation" (info: applied events). Divergence raises
    DivergenceError whose ``result`` still carries the partial trace with an
    abort record appended.
    """
    streams = np.random.SeedSequence(config.seed).spawn(4)
    model_rng, task_rng, batch_rng, alloc_rng = (np.random.default_rng(s) for s in streams)

    model = build_model(config.layers, config.loss, model_rng,
                        init_std=config.init_strategy.gauss_std)
    teacher = None
    if config.task.kind == "low_rank_teacher":
        teacher = build_teacher(model, config.task, task_rng)
        dataset = sample_regression(teacher, config.task, task_rng)
    else:
        dataset = sample_blobs(config.task, task_rng)

    adapters = model.adapters()
    optimizer = config.optimizer.build()
    states = {a.id: SensitivityState() for a in adapters}
    use_sensitivity = config.metric.variant == "sensitivity"

    header = _trace_header(config, model)
    events = []
    metrics = []
    schedule = config.schedule
    gamma = config.regularizer_weight
    n = dataset.inputs.shape[1]
    initial_loss = None
    loss = float("nan")

    def result(abort=None):
        return TrainResult(
            model=model, header=header, events=events, metrics=metrics,
            final_loss=loss, dataset=dataset, teacher=teacher,
            diverged=abort is not None, abort=abort,
        )

    for t in range(schedule.total_steps):
        cols = batch_rng.integers(0, n, size=config.batch_size)
        x = dataset.inputs[:, cols]
        targets = dataset.targets[:, cols] if dataset.targets.ndim == 2 else dataset.targets[cols]

        y, caches = model.forward(x)
        loss, grad_out = model.loss_and_grad(y, targets)
        if initial_loss is None:
            initial_loss = loss
        if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * max(abs(initial_loss), 1e-12):
            abort = {"type": "abort", "step": t, "reason": "divergence", "loss": loss}
            raise DivergenceError(
                f"loss {loss} at step {t} (initial {initial_loss})", result(abort)
            )

        grads = model.backward(caches, grad_out, gamma)
        if use_sensitivity:
            for a in adapters:
                states[a.id] = sensitivity_update(
                    states[a.id],
                    (a.p, a.lam, a.q),
                    (grads[f"{a.id}.p"], grads[f"{a.id}.lam"], grads[f"{a.id}.q"]),
                    config.metric.beta1,
                    config.metric.beta2,
                )
        params = model.trainable_params()
        no_decay = frozenset(k for k in params if k.endswith(".bias"))
        optimizer.step(params, grads, no_decay=no_decay)

        if adapters and schedule.is_allocation_step(t):
            b = schedule.budget(t)
            if b > 0:
                report = score_all(adapters, config.metric, states, step=t)
                prune_ids, expand_ids = select_candidates(report, adapters, b, config.mode)
                if observer is not None:
                    observer(t, "pre_allocation", model,
                             {"prune": prune_ids, "expand": expand_ids, "report": report})
                step_events = []
                if prune_ids or expand_ids:
                    step_events = apply_allocation(
                        adapters, prune_ids, expand_ids, config.init_strategy,
                        alloc_rng, step=t, scores=report.scores,
                    )
                    for event in step_events:
                        optimizer.sync_rank_change(event)
                    events.extend(step_events)
                if observer is not None:
                    observer(t, "post_allocation", model, {"events": step_events})

        if t % config.log_every == 0 or t == schedule.total_steps - 1:
            metrics.append(_metrics_row(t, loss, model))

    return result()


def metrics_csv_lines(header, metrics):
    """Render metrics rows as CSV; column order is fixed by the header's
    adapter order so reruns are byte-identical."""
    ids = [a["id"] for a in header["adapters"]]
    columns = ["step", "loss", "total_rank", "param_count"] + [f"rank_{i}" for i in ids]
    lines = [",".join(columns)]
    for row in metrics:
        cells = []
        for col in columns:
            value = row[col]
            cells.append(repr(float(value)) if col == "loss" else str(int(value)))
        lines.append(",".join(cells))
    return lines
