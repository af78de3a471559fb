"""Supervised training of masked models: losses, SGD with Nesterov momentum, schedules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .data import Batch, Dataset, iterate
from .nn import MaskedModel, forward, logits as model_logits
from .tensor import NumericError, ShapeError, Tensor


def smooth_labels(labels, num_classes: int, alpha: float, dtype=np.float64) -> np.ndarray:
    """Rows with ``1 - alpha`` on the label and ``alpha / (K - 1)`` elsewhere."""
    if num_classes < 2:
        raise ValueError("label smoothing needs at least 2 classes")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.full((len(labels), num_classes), alpha / (num_classes - 1), dtype=dtype)
    rows[np.arange(len(labels)), labels] = 1.0 - alpha
    return rows


def one_hot(labels, num_classes: int, dtype=np.float64) -> np.ndarray:
    return smooth_labels(labels, num_classes, 0.0, dtype)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Batch mean of ``-sum_c t_c log softmax(logits)_c``.

    ``targets`` is either a vector of integer labels or a matrix of soft rows.
    """
    targets = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    B, K = logits.shape
    if targets.ndim == 1:
        targets = one_hot(targets, K, logits.dtype)
    elif targets.shape != (B, K):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    elif np.abs(targets.sum(axis=1) - 1.0).max(initial=0.0) > 1e-6:
        raise ValueError("cross_entropy: soft target rows must sum to 1")
    if not np.isfinite(logits.data).all():
        raise NumericError("cross_entropy: non-finite logits")
    t = Tensor(targets, dtype=logits.dtype)
    return -(t * logits.log_softmax(axis=1)).sum(axis=1).mean()


# -- optimizer -----------------------------------------------------------------------
@dataclass
class OptimizerState:
    lr: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    schedule: list[tuple[int, float]] = field(default_factory=list)
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if any(f <= 0 for _, f in self.schedule):
            raise ValueError("schedule factors must be positive")
        self.schedule = [(int(e), float(f)) for e, f in self.schedule]

    def to_dict(self) -> dict:
        return {"lr": self.lr, "momentum": self.momentum, "nesterov": self.nesterov, "schedule": self.schedule}


def lr_at(initial: float, schedule, epoch: int) -> float:
    """Initial rate times every factor whose trigger epoch is <= ``epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr = initial
    for trigger, factor in schedule:
        if epoch >= trigger:
            lr *= factor
    return lr


def sgd_step(model: MaskedModel, grads: dict[str, np.ndarray], state: OptimizerState, lr: float | None = None):
    """One in-place SGD update; masked-out weights are updated like any other."""
    lr = state.lr if lr is None else lr
    mu = state.momentum
    for p in model.params:
        g = grads.get(p.name)
        if g is None:
            continue
        g = np.asarray(g, dtype=p.weight.dtype)
        if g.shape != p.weight.shape:
            raise ShapeError(f"sgd_step: gradient for {p.name} has shape {g.shape}, weight {p.weight.shape}")
        v = state.velocity.get(p.name)
        v = g.copy() if v is None else mu * v + g
        state.velocity[p.name] = v
        update = g + mu * v if state.nesterov else v
        p.weight.data -= (lr * update).astype(p.weight.dtype)
    return model, state


def loss_gradients(model: MaskedModel, loss: Tensor) -> dict[str, np.ndarray]:
    weights = model.weights()
    grads = T.backward(loss, wrt=weights)
    return {p.name: grads[p.weight].data for p in model.params}


# -- loops ---------------------------------------------------------------------------
def evaluate(model: MaskedModel, dataset: Dataset, batchsize: int = 1024) -> dict:
    """Accuracy (argmax, ties to the lowest class) and mean cross-entropy."""
    if len(dataset) == 0:
        raise ValueError("evaluate: empty dataset")
    z = model_logits(model, dataset.x, batchsize).astype(np.float64)
    zs = z - z.max(axis=1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(dataset)), dataset.y].mean()
    acc = (np.argmax(z, axis=1) == dataset.y).mean()
    return {"accuracy": float(acc), "loss": float(loss)}


BatchLoss = Callable[[MaskedModel, Batch, Tensor], Tensor]


def supervised_loss(smoothing: float | None = None) -> BatchLoss:
    def loss_fn(model: MaskedModel, batch: Batch, out: Tensor) -> Tensor:
        if smoothing:
            return cross_entropy(out, smooth_labels(batch.y, out.shape[1], smoothing, out.dtype))
        return cross_entropy(out, batch.y)

    return loss_fn


def fit(
    model: MaskedModel,
    dataset: Dataset,
    epochs: int,
    batchsize: int,
    optimizer: OptimizerState,
    loss_fn: BatchLoss,
    seed: int = 0,
    val: Dataset | None = None,
    on_epoch: Callable[[int, dict], None] | None = None,
) -> list[dict]:
    """Generic epoch loop; returns one metrics row per epoch."""
    if len(dataset) == 0:
        raise ValueError("fit: empty dataset")
    rows = []
    for epoch in range(epochs):
        lr = lr_at(optimizer.lr, optimizer.schedule, epoch)
        total, correct, seen = 0.0, 0, 0
        for batch in iterate(dataset, batchsize, "shuffled", seed=[seed, epoch]):
            out = forward(model, batch.x)
            loss = loss_fn(model, batch, out)
            grads = loss_gradients(model, loss)
            sgd_step(model, grads, optimizer, lr)
            n = len(batch)
            total += loss.item() * n
            correct += int((np.argmax(out.data, axis=1) == batch.y).sum())
            seen += n
        if not np.isfinite(total):
            raise NumericError(f"training diverged at epoch {epoch}")
        row = {"epoch": epoch, "split": "train", "lr": lr, "loss": total / seen, "accuracy": correct / seen}
        if val is not None and len(val):
            ev = evaluate(model, val)
            row["val_loss"], row["val_accuracy"] = ev["loss"], ev["accuracy"]
        if on_epoch is not None:
            on_epoch(epoch, row)
        rows.append(row)
    return rows


def train(
    model: MaskedModel,
    dataset: Dataset,
    epochs: int,
    batchsize: int,
    optimizer: OptimizerState,
    smoothing: float | None = None,
    seed: int = 0,
    val: Dataset | None = None,
) -> tuple[MaskedModel, list[dict]]:
    """Train ``model`` in place with (optionally label-smoothed) cross-entropy."""
    rows = fit(model, dataset, epochs, batchsize, optimizer, supervised_loss(smoothing), seed, val)
    return model, rows
