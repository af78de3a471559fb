"""Logits(tau) knowledge distillation from a frozen, possibly sparse, teacher."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax as np_log_softmax

from .data import Batch, Dataset
from .nn import MaskedModel, forward, logits as model_logits
from .tensor import ShapeError, Tensor
from .training import OptimizerState, cross_entropy, fit

_TEACHER_CACHE: OrderedDict = OrderedDict()
_CACHE_SIZE = 8


@dataclass
class DistillConfig:
    tau: float = 1.0
    lam: float = 1.0
    epochs: int = 30
    batchsize: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    schedule: list = field(default_factory=list)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")

    def optimizer(self) -> OptimizerState:
        return OptimizerState(self.lr, self.momentum, self.nesterov, list(self.schedule))


def kd_loss(teacher_logits, student_logits: Tensor, tau: float) -> Tensor:
    """``tau^2 * mean_i KL(softmax(t_i / tau) || softmax(s_i / tau))``.

    The teacher side is a constant; only the student carries gradient.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    t = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits, dtype=np.float64)
    if t.shape != student_logits.shape:
        raise ShapeError(f"kd_loss: teacher {t.shape} vs student {student_logits.shape}")
    log_p = np_log_softmax(t / tau, axis=1)
    p = np.exp(log_p)
    # sum_c p log p is a constant offset that makes the value a true divergence
    neg_entropy = float((p * log_p).sum(axis=1).mean())
    cross = (Tensor(p, dtype=student_logits.dtype) * (student_logits / tau).log_softmax(axis=1)).sum(axis=1).mean()
    return (neg_entropy - cross) * (tau * tau)


def student_loss(batch: Batch, teacher, student: MaskedModel | Tensor, tau: float, lam: float) -> Tensor:
    """``(1 - lam) * CE(student, labels) + lam * kd_loss(teacher, student, tau)``.

    ``teacher`` may be a model or precomputed logits for the batch; ``student``
    may be a model or its logits for the batch.
    """
    s = student if isinstance(student, Tensor) else forward(student, batch.x)
    t = teacher if not isinstance(teacher, MaskedModel) else model_logits(teacher, batch.x)
    loss = None
    if lam < 1.0:
        loss = cross_entropy(s, batch.y) * (1.0 - lam)
    if lam > 0.0:
        kd = kd_loss(t, s, tau) * lam
        loss = kd if loss is None else loss + kd
    return loss


def _fingerprint(dataset: Dataset) -> tuple:
    return (dataset.x.shape, hash(dataset.x.tobytes()), hash(dataset.y.tobytes()))


def teacher_logits(teacher: MaskedModel, dataset: Dataset) -> np.ndarray:
    """Teacher logits for the whole dataset, cached by teacher checksum."""
    key = (teacher.checksum(), _fingerprint(dataset))
    if key in _TEACHER_CACHE:
        _TEACHER_CACHE.move_to_end(key)
        return _TEACHER_CACHE[key]
    z = model_logits(teacher, dataset.x)
    z.flags.writeable = False
    _TEACHER_CACHE[key] = z
    while len(_TEACHER_CACHE) > _CACHE_SIZE:
        _TEACHER_CACHE.popitem(last=False)
    return z


def distill(
    teacher: MaskedModel,
    student: MaskedModel,
    dataset: Dataset,
    config: DistillConfig,
    seed: int = 0,
    val: Dataset | None = None,
    teacher_info: dict | None = None,
) -> tuple[MaskedModel, list[dict]]:
    """Train ``student`` in place against the frozen ``teacher``.

    Each epoch row carries the mean CE and KD components (already weighted by
    ``1 - lam`` and ``lam``) and, when given, ``teacher_info`` fields such as
    the teacher's delta and sparsity.
    """
    for name, model in (("teacher", teacher), ("student", student)):
        if int(np.prod(model.spec.input_shape)) != int(np.prod(dataset.input_shape)):
            raise ShapeError(f"{name} input shape {model.spec.input_shape} does not match dataset {dataset.input_shape}")
    if teacher.spec.num_classes != student.spec.num_classes or student.spec.num_classes != dataset.num_classes:
        raise ShapeError("teacher, student and dataset disagree on the class count")

    before = teacher.checksum()
    cached = teacher_logits(teacher, dataset)
    components = {"ce": 0.0, "kd": 0.0, "n": 0}

    def loss_fn(model: MaskedModel, batch: Batch, out: Tensor) -> Tensor:
        t = cached[batch.index]
        n = len(batch)
        ce = cross_entropy(out, batch.y) * (1.0 - config.lam) if config.lam < 1.0 else None
        kd = kd_loss(t, out, config.tau) * config.lam if config.lam > 0.0 else None
        components["ce"] += (ce.item() if ce is not None else 0.0) * n
        components["kd"] += (kd.item() if kd is not None else 0.0) * n
        components["n"] += n
        if ce is None:
            return kd
        return ce if kd is None else ce + kd

    def on_epoch(epoch: int, row: dict) -> None:
        n = components["n"]
        row["ce_loss"] = components["ce"] / n
        row["kd_loss"] = components["kd"] / n
        row.update({f"teacher_{k}": v for k, v in (teacher_info or {}).items()})
        components.update(ce=0.0, kd=0.0, n=0)

    rows = fit(student, dataset, config.epochs, config.batchsize, config.optimizer(), loss_fn, seed, val, on_epoch)
    if teacher.checksum() != before:
        raise RuntimeError("teacher parameters changed during distillation")
    return student, rows
