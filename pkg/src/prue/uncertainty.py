"""Prediction uncertainty: mean intra-class variance of the true-class probability.

For class ``c`` with ``n_c`` samples, let ``f_i`` be the softmax probability the
model assigns to class ``c`` on sample ``i``.  The metric is

    delta = (1/K) * sum_c (1/n_c) * sum_{i in c} (f_i - mean_c f)^2

i.e. the average over classes of the population variance of ``f_i``.

Because the sum of residuals around a population mean is zero, the gradient
of each class term with respect to its mean vanishes.  Holding the class means
constant (the two-pass estimator) therefore yields the exact gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset, iterate
from .nn import MaskedModel, forward, predict_proba
from .tensor import Tensor


class UncertaintyError(ValueError):
    pass


@dataclass
class ClassMeans:
    means: np.ndarray  # [K], mean true-class probability per class
    counts: np.ndarray  # [K]
    detached: bool = True


@dataclass
class UncertaintyReport:
    delta: float
    per_class_variance: np.ndarray
    class_counts: np.ndarray
    split: str = "train"
    mode: str = "direct"
    grads: dict[str, np.ndarray] | None = field(default=None, repr=False)

    @property
    def delta_1e2(self) -> float:
        return 100.0 * self.delta

    @property
    def num_samples(self) -> int:
        return int(self.class_counts.sum())

    @property
    def singleton_classes(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.class_counts == 1)]

    def to_metrics(self) -> dict:
        return {
            "delta": self.delta,
            "delta_1e2": self.delta_1e2,
            "split": self.split,
            "mode": self.mode,
            "num_samples": self.num_samples,
            "class_counts": [int(n) for n in self.class_counts],
            "per_class_variance": [float(v) for v in self.per_class_variance],
            "singleton_classes": self.singleton_classes,
        }


def _check_classes(dataset: Dataset) -> np.ndarray:
    counts = dataset.class_counts
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise UncertaintyError(f"classes with no samples: {empty.tolist()}")
    return counts


def true_class_proba(model: MaskedModel, dataset: Dataset, batchsize: int = 1024) -> np.ndarray:
    probs = predict_proba(model, dataset.x, batchsize)
    return probs[np.arange(len(dataset)), dataset.y]


def class_means(model: MaskedModel, dataset: Dataset, batchsize: int = 1024) -> ClassMeans:
    """Mean true-class probability per class, computed without a tape."""
    counts = _check_classes(dataset)
    f = true_class_proba(model, dataset, batchsize).astype(np.float64)
    sums = np.bincount(dataset.y, weights=f, minlength=dataset.num_classes)
    return ClassMeans(sums / counts, counts)


def delta_direct(model: MaskedModel, dataset: Dataset, batchsize: int = 1024) -> UncertaintyReport:
    counts = _check_classes(dataset)
    f = true_class_proba(model, dataset, batchsize).astype(np.float64)
    var = np.array([f[dataset.y == c].var() for c in range(dataset.num_classes)])
    return UncertaintyReport(float(var.mean()), var, counts, dataset.split, "direct")


def delta_two_pass(
    model: MaskedModel,
    dataset: Dataset,
    batchsize: int = 256,
    grad_wrt: str | None = None,
) -> UncertaintyReport:
    """Class means first (detached), then class-pure batches accumulate the variance.

    ``grad_wrt`` may be ``"masks"`` or ``"weights"``; the report then carries the
    accumulated gradient of delta for every prunable (masks) or every (weights)
    parameter, keyed by parameter name.
    """
    if grad_wrt not in (None, "masks", "weights"):
        raise ValueError(f"grad_wrt must be None, 'masks' or 'weights', got {grad_wrt!r}")
    cm = class_means(model, dataset, batchsize)
    K = dataset.num_classes
    partial = np.zeros(K)
    grads = None
    if grad_wrt == "masks":
        leaves = {p.name: p.mask for p in model.prunable()}
    elif grad_wrt == "weights":
        leaves = {p.name: p.weight for p in model.params}
    else:
        leaves = {}
    saved = {name: t.requires_grad for name, t in leaves.items()}
    for t in leaves.values():
        t.requires_grad = True
    if leaves:
        grads = {name: np.zeros(t.shape, dtype=np.float64) for name, t in leaves.items()}
    try:
        for batch in iterate(dataset, batchsize, "class_sorted"):
            c = int(batch.y[0])
            if (batch.y != c).any():
                raise UncertaintyError("internal invariant violated: mixed labels in a class-sorted batch")
            weight = 1.0 / (K * cm.counts[c])
            if leaves:
                out = forward(model, batch.x)
                onehot = np.zeros((1, K), dtype=out.dtype)
                onehot[0, c] = 1.0
                f = (out.softmax(axis=1) * onehot).sum(axis=1)
                resid = f - Tensor(np.array(cm.means[c], dtype=out.dtype))
                term = (resid * resid).sum() * weight
                g = T.backward(term, wrt=leaves.values())
                for name, t in leaves.items():
                    grads[name] += g[t].data
                fv = f.data.astype(np.float64)
            else:
                with T.no_grad():
                    out = forward(model, batch.x)
                fv = out.softmax(axis=1).data[:, c].astype(np.float64)
            partial[c] += np.sum((fv - cm.means[c]) ** 2)
    finally:
        for name, t in leaves.items():
            t.requires_grad = saved[name]
            t.grad = None
    var = partial / cm.counts
    return UncertaintyReport(float(var.mean()), var, cm.counts, dataset.split, "two-pass", grads)


def delta_exact_tape(model: MaskedModel, dataset: Dataset, grad_wrt: str = "masks") -> UncertaintyReport:
    """Whole-dataset evaluation with the class means inside the tape.

    Small datasets only; exists to compare against the detached two-pass estimator.
    """
    counts = _check_classes(dataset)
    K = dataset.num_classes
    leaves = (
        {p.name: p.mask for p in model.prunable()}
        if grad_wrt == "masks"
        else {p.name: p.weight for p in model.params}
    )
    saved = {name: t.requires_grad for name, t in leaves.items()}
    for t in leaves.values():
        t.requires_grad = True
    try:
        out = forward(model, dataset.x)
        onehot = np.eye(K, dtype=out.dtype)[dataset.y]
        f = (out.softmax(axis=1) * onehot).sum(axis=1).reshape(1, -1)  # [1, m]
        # class means via a [m, K] averaging matrix, scattered back to samples
        avg = Tensor(onehot / counts[None, :].astype(out.dtype))
        means = T.matmul(f, avg)  # [1, K]
        per_sample_mean = T.matmul(means, Tensor(onehot.T.copy()))  # [1, m]
        resid = f - per_sample_mean
        weights = Tensor((1.0 / (K * counts[dataset.y])).astype(out.dtype).reshape(1, -1))
        delta = (resid * resid * weights).sum()
        g = T.backward(delta, wrt=leaves.values())
        grads = {name: g[t].data.astype(np.float64) for name, t in leaves.items()}
        fv = f.data.reshape(-1).astype(np.float64)
    finally:
        for name, t in leaves.items():
            t.requires_grad = saved[name]
            t.grad = None
    var = np.array([fv[dataset.y == c].var() for c in range(K)])
    return UncertaintyReport(float(var.mean()), var, counts, dataset.split, "exact", grads)
