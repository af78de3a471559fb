"""One-shot global pruning with PrUE and baseline saliency scores."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .data import Dataset, iterate
from .nn import MaskedModel, forward, sparsity_report
from .training import OptimizerState, cross_entropy, evaluate, fit, supervised_loss
from .uncertainty import UncertaintyReport, delta_direct, delta_two_pass

METHODS = ("prue", "magnitude", "snip", "random")


@dataclass
class ScoreVector:
    """Non-negative scores aligned with the model's prunable-weight enumeration."""

    values: np.ndarray
    method: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("scores must be a flat vector")
        if not np.isfinite(self.values).all() or (self.values < 0).any():
            raise ValueError("scores must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.values)


def _require_dense(model: MaskedModel) -> None:
    if not all(np.all(m.data == 1) for m in model.masks()):
        raise ValueError("scores are computed at the unpruned point; all masks must be ones")


def prue_scores(model: MaskedModel, dataset: Dataset, batchsize: int = 256) -> ScoreVector:
    """``|d delta / d m_j|`` at ``m = 1``."""
    _require_dense(model)
    report = delta_two_pass(model, dataset, batchsize, grad_wrt="masks")
    flat = np.concatenate([report.grads[p.name].ravel() for p in model.prunable()])
    return ScoreVector(np.abs(flat), "prue", {"split": dataset.split, "num_samples": len(dataset), "delta": report.delta})


def prue_scores_via_weights(model: MaskedModel, dataset: Dataset, batchsize: int = 256) -> ScoreVector:
    """Same criterion through the chain rule: ``|w_j * d delta / d w~_j|`` with ``w~ = m * w``.

    At ``m = 1`` the gradient with respect to ``w`` equals the gradient with
    respect to the effective weight.
    """
    _require_dense(model)
    report = delta_two_pass(model, dataset, batchsize, grad_wrt="weights")
    flat = np.concatenate(
        [(p.weight.data.astype(np.float64) * report.grads[p.name]).ravel() for p in model.prunable()]
    )
    return ScoreVector(np.abs(flat), "prue", {"split": dataset.split, "num_samples": len(dataset), "route": "weights"})


def _snip_scores(model: MaskedModel, dataset: Dataset, batchsize: int) -> np.ndarray:
    masks = {p.name: p.mask for p in model.prunable()}
    for m in masks.values():
        m.requires_grad = True
    acc = {name: np.zeros(m.shape) for name, m in masks.items()}
    try:
        for batch in iterate(dataset, batchsize, "sequential"):
            out = forward(model, batch.x)
            # batch mean rescaled so the sum over batches is the dataset mean
            loss = cross_entropy(out, batch.y) * (len(batch) / len(dataset))
            g = T.backward(loss, wrt=masks.values())
            for name, m in masks.items():
                acc[name] += g[m].data
    finally:
        for m in masks.values():
            m.requires_grad = False
            m.grad = None
    return np.abs(np.concatenate([acc[p.name].ravel() for p in model.prunable()]))


def baseline_scores(
    method: str,
    model: MaskedModel,
    dataset: Dataset | None = None,
    seed: int | None = None,
    batchsize: int = 256,
) -> ScoreVector:
    if method == "magnitude":
        return ScoreVector(np.abs(model.flat_weights()), method)
    if method == "random":
        if seed is None:
            raise ValueError("random scores need a seed")
        rng = np.random.default_rng([seed, 0x5EED])
        return ScoreVector(rng.uniform(0.0, 1.0, model.num_prunable), method, {"seed": seed})
    if method == "snip":
        if dataset is None:
            raise ValueError("snip scores need a labeled dataset")
        _require_dense(model)
        return ScoreVector(_snip_scores(model, dataset, batchsize), method, {"split": dataset.split, "num_samples": len(dataset)})
    raise ValueError(f"unknown baseline method {method!r}")


def compute_scores(method: str, model: MaskedModel, dataset: Dataset | None, seed: int | None = None, batchsize: int = 256) -> ScoreVector:
    if method == "prue":
        if dataset is None:
            raise ValueError("prue scores need a labeled dataset")
        return prue_scores(model, dataset, batchsize)
    return baseline_scores(method, model, dataset, seed, batchsize)


def num_pruned(sparsity: float, total: int) -> int:
    """``floor(s * l)`` evaluated on the decimal value of ``s`` (so 0.29 * 100 is 29)."""
    return math.floor(Fraction(repr(float(sparsity))) * total)


def select_mask(scores: ScoreVector | np.ndarray, sparsity: float) -> np.ndarray:
    """Flat binary mask zeroing the ``floor(s * l)`` lowest scores, ranked globally.

    Ties go to the lower enumeration index first.
    """
    values = scores.values if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    k = num_pruned(sparsity, len(values))
    mask = np.ones(len(values), dtype=np.uint8)
    mask[np.argsort(values, kind="stable")[:k]] = 0
    return mask


def apply_mask(model: MaskedModel, flat_mask: np.ndarray) -> MaskedModel:
    model.set_masks(model.unflatten(flat_mask))
    return model


@dataclass
class FinetuneConfig:
    epochs: int = 10
    batchsize: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    nesterov: bool = True
    schedule: list = field(default_factory=list)
    smoothing: float | None = None

    def optimizer(self) -> OptimizerState:
        return OptimizerState(self.lr, self.momentum, self.nesterov, list(self.schedule))


def prune_and_finetune(
    model: MaskedModel,
    method: str,
    sparsity: float,
    dataset: Dataset,
    finetune: FinetuneConfig,
    seed: int = 0,
    val: Dataset | None = None,
    batchsize: int = 256,
) -> tuple[MaskedModel, ScoreVector, dict]:
    """Score the trained dense ``model``, mask a copy, and fine-tune it with masks fixed.

    Returns the sparse model, its scores and a report with accuracy and delta
    (measured on ``dataset``) for the dense, pruned and fine-tuned states.
    """
    scores = compute_scores(method, model, dataset, seed, batchsize)
    sparse = apply_mask(model.copy(), select_mask(scores, sparsity))
    eval_set = val if val is not None else dataset

    def snapshot(m: MaskedModel) -> dict:
        rep: UncertaintyReport = delta_direct(m, dataset)
        return {"accuracy": evaluate(m, eval_set)["accuracy"], "delta": rep.delta, "delta_1e2": rep.delta_1e2}

    report = {"method": method, "sparsity": sparsity, "dense": snapshot(model), "pruned": snapshot(sparse)}
    rows = fit(
        sparse,
        dataset,
        finetune.epochs,
        finetune.batchsize,
        finetune.optimizer(),
        supervised_loss(finetune.smoothing),
        seed=seed,
        val=val,
    )
    report["finetuned"] = snapshot(sparse)
    report["rows"] = rows
    report["sparsity_report"] = sparsity_report(sparse)["global"]
    return sparse, scores, report
