"""Synthetic desk-scale tasks with controllable intrinsic rank.

The regression task plants a teacher network: the student's frozen base
weights plus, at every adapted layer, an additive delta of exactly the
requested rank. Targets are teacher outputs with optional Gaussian
observation noise, so an adapter can close the gap exactly if and only if
its rank reaches the teacher's. The classification task is two separable
Gaussian blobs.

Teachers are frozen at construction (they snapshot the base weights), so a
fresh evaluation set can be sampled later against the same teacher.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .linalg import gram_schmidt_extend
from .model import ActivationLayer, LinearLayer, ToyModel

__all__ = [
    "TASK_KINDS",
    "SyntheticTask",
    "TeacherNet",
    "Dataset",
    "build_teacher",
    "sample_regression",
    "sample_blobs",
    "make_task",
]

TASK_KINDS = ("low_rank_teacher", "two_blobs")


@dataclass(frozen=True)
class SyntheticTask:
    """Task description; fields beyond the common ones apply per kind."""

    kind: str
    input_dim: int
    sample_count: int
    noise_std: float = 0.0
    teacher_ranks: tuple[int, ...] = ()
    teacher_scale: float = 1.0
    blob_separation: float = 4.0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ParameterError(f"unknown task kind {self.kind!r}")
        if self.input_dim < 1:
            raise ParameterError("input_dim must be >= 1")
        if self.sample_count < 1:
            raise ParameterError("sample_count must be >= 1")
        if not self.noise_std >= 0.0:
            raise ParameterError("noise_std must be >= 0")
        if self.kind == "low_rank_teacher":
            if not self.teacher_ranks:
                raise ParameterError("low_rank_teacher needs teacher_ranks")
            if any(r < 1 for r in self.teacher_ranks):
                raise ParameterError("teacher ranks must be >= 1")
            if not self.teacher_scale > 0.0:
                raise ParameterError("teacher_scale must be positive")
        if self.kind == "two_blobs" and not self.blob_separation > 0.0:
            raise ParameterError("blob_separation must be positive")


@dataclass(frozen=True)
class TeacherNet:
    """Frozen reference network: (kind, weight-or-None) per layer.

    ``deltas`` keeps the per-layer additive updates for rank verification
    and for constructing a student that matches the teacher exactly.
    """

    layers: tuple
    deltas: dict[int, np.ndarray] = field(default_factory=dict)

    def forward(self, x):
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2:
            raise ShapeError("input batch must be 2-D")
        for kind, w in self.layers:
            if kind == "linear":
                h = w @ h
            elif kind == "tanh":
                h = np.tanh(h)
            else:
                h = np.maximum(h, 0.0)
        return h

    @property
    def output_dim(self):
        for kind, w in reversed(self.layers):
            if kind == "linear":
                return w.shape[0]
        raise ParameterError("teacher has no linear layer")


@dataclass(frozen=True)
class Dataset:
    """Column-major inputs plus targets (matrix for regression, labels for
    classification); carries its teacher when one exists."""

    inputs: np.ndarray
    targets: np.ndarray
    teacher: TeacherNet | None = None


def _orthonormal_columns(dim, k, rng):
    cols = np.zeros((dim, 0))
    for _ in range(k):
        new = gram_schmidt_extend(cols, rng.standard_normal(dim), rng)
        cols = np.column_stack([cols, new])
    return cols


def _rank_k_delta(d_out, d_in, k, scale, rng):
    # Sum of k outer products of orthonormal factor pairs: exactly k singular
    # values, all equal to scale / sqrt(k). A sum of free Gaussian outer
    # products would also be rank k but with a heavily decaying spectrum,
    # which quietly turns "intrinsic rank k" into "a few ranks that matter".
    if k > min(d_out, d_in):
        raise ParameterError(f"teacher rank {k} exceeds layer dims {d_out}x{d_in}")
    u = _orthonormal_columns(d_out, k, rng)
    v = _orthonormal_columns(d_in, k, rng)
    return (scale / np.sqrt(k)) * (u @ v.T)


def build_teacher(model, task, rng):
    """Teacher = student base weights + rank-k deltas at adapted layers.

    ``task.teacher_ranks`` pairs with the model's adapted layers in depth
    order; biases are left at zero so the adapters carry the whole gap.
    """
    if task.kind != "low_rank_teacher":
        raise ParameterError(f"task kind {task.kind!r} has no teacher")
    adapted = [i for i, l in enumerate(model.layers)
               if isinstance(l, LinearLayer) and l.adapter is not None]
    if len(task.teacher_ranks) != len(adapted):
        raise ParameterError(
            f"{len(task.teacher_ranks)} teacher ranks for {len(adapted)} adapted layers"
        )
    ranks = dict(zip(adapted, task.teacher_ranks))
    layers = []
    deltas = {}
    for i, layer in enumerate(model.layers):
        if isinstance(layer, ActivationLayer):
            layers.append((layer.kind, None))
            continue
        w = np.array(layer.base_w)
        if i in ranks:
            delta = _rank_k_delta(layer.d_out, layer.d_in, ranks[i], task.teacher_scale, rng)
            deltas[i] = delta
            w = w + delta
        w.flags.writeable = False
        layers.append(("linear", w))
    return TeacherNet(layers=tuple(layers), deltas=deltas)


def sample_regression(teacher, task, rng, sample_count=None, noise_std=None):
    """Draw inputs ~ N(0, I) and teacher targets with optional noise.

    ``sample_count`` and ``noise_std`` default to the task's values; pass
    explicit ones to build held-out or noiseless evaluation sets against the
    same teacher.
    """
    n = task.sample_count if sample_count is None else int(sample_count)
    std = task.noise_std if noise_std is None else float(noise_std)
    if n < 1:
        raise ParameterError("sample_count must be >= 1")
    if not std >= 0.0:
        raise ParameterError("noise_std must be >= 0")
    x = rng.standard_normal((task.input_dim, n))
    y = teacher.forward(x)
    if std > 0.0:
        y = y + std * rng.standard_normal(y.shape)
    return Dataset(inputs=x, targets=y, teacher=teacher)


def sample_blobs(task, rng):
    """Two Gaussian clusters at +-separation/2 along a random direction."""
    n = task.sample_count
    direction = rng.standard_normal(task.input_dim)
    direction /= np.linalg.norm(direction)
    center = (task.blob_separation / 2.0) * direction
    labels = rng.integers(0, 2, size=n)
    signs = np.where(labels == 0, -1.0, 1.0)
    x = rng.standard_normal((task.input_dim, n)) + center[:, None] * signs[None, :]
    return Dataset(inputs=x, targets=labels.astype(np.int64))


def make_task(task, rng, model=None):
    """Build the dataset for ``task``; the teacher kinds need the model."""
    if task.kind == "low_rank_teacher":
        if model is None:
            raise ParameterError("low_rank_teacher needs the model for its base weights")
        teacher = build_teacher(model, task, rng)
        return sample_regression(teacher, task, rng)
    return sample_blobs(task, rng)
