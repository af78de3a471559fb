from __future__ import annotations

from contextlib import contextmanager

import numpy as np
import pytest

import prue.tensor as T

from prue.data import Dataset, synthetic_blobs
from prue.nn import ArchitectureSpec, Layer, MaskedModel, build_model, family, forward
from prue.uncertainty import delta_exact_tape
from prue.tensor import Tensor, backward, finite_difference_gradient, no_grad


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def tiny_mlp(seed: int = 0, dtype=np.float64) -> MaskedModel:
    """The 2-8-8-3 MLP used by the gradient oracles."""
    spec = ArchitectureSpec(
        "mlp-2-8-8-3",
        (2,),
        (Layer("dense", 2, 8, activation="relu"), Layer("dense", 8, 8, activation="relu"), Layer("dense", 8, 3)),
        3,
    )
    return build_model(spec, seed, dtype)


def tiny_cnn(seed: int = 0, dtype=np.float64, num_classes: int = 3) -> MaskedModel:
    return build_model(family("cnn-s", (1, 8, 8), num_classes), seed, dtype)


def blobs(per_class=12, seed=0, dtype=np.float64, num_classes=3, dim=2) -> Dataset:
    return synthetic_blobs(num_classes, per_class, dim, 2.0, seed).astype(dtype)


def images(per_class=6, seed=0, dtype=np.float64, num_classes=3) -> Dataset:
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(num_classes), per_class)
    x = rng.normal(size=(len(y), 1, 8, 8)) + y[:, None, None, None] * 0.5
    return Dataset(x.astype(dtype), y, num_classes)


def flat_leaves(model: MaskedModel, which: str) -> list[Tensor]:
    if which == "masks":
        return [p.mask for p in model.prunable()]
    return [p.weight for p in model.params]


@contextmanager
def relu_patterns():
    """Record the sign pattern of every relu input evaluated inside the block."""
    seen: list[bytes] = []
    original = T.relu

    def recording(x):
        seen.append(np.packbits(x.data > 0).tobytes())
        return original(x)

    T.relu = recording
    try:
        yield seen
    finally:
        T.relu = original


def gradient_oracle(model: MaskedModel, which: str, loss_of, n_coords: int = 100, seed: int = 0, eps: float = 1e-3):
    """Analytic vs central-difference gradients of ``loss_of(model)`` at sampled coordinates.

    Returns ``(analytic, numeric)`` arrays over sampled flat coordinates of all
    weights (``which="weights"``) or all prunable masks (``which="masks"``).
    A central difference is only a valid oracle on one linear piece of the
    relu network, so coordinates whose +-eps probe flips any relu are skipped.
    """
    leaves = flat_leaves(model, which)
    saved = [t.requires_grad for t in leaves]
    for t in leaves:
        t.requires_grad = True
    try:
        g = backward(loss_of(model), wrt=leaves)
        analytic = np.concatenate([g[t].data.ravel() for t in leaves])
    finally:
        for t, s in zip(leaves, saved):
            t.requires_grad = s
            t.grad = None
    sizes = [t.size for t in leaves]
    shapes = [t.shape for t in leaves]
    point = np.concatenate([t.data.ravel() for t in leaves]).astype(np.float64)

    def fn(vec: Tensor):
        trial = model.copy()
        parts = np.split(vec.data, np.cumsum(sizes)[:-1])
        for t, part, shape in zip(flat_leaves(trial, which), parts, shapes):
            t.data = part.reshape(shape).astype(t.dtype)
        with no_grad():
            return loss_of(trial)

    with relu_patterns() as seen:
        fn(Tensor(point))
    base = list(seen)
    rng = np.random.default_rng(seed)
    picked, numeric = [], []
    for j in rng.permutation(point.size):
        with relu_patterns() as seen:
            d = finite_difference_gradient(fn, point, eps=eps, indices=[j]).data[j]
        half = len(seen) // 2
        if seen[:half] != base or seen[half:] != base:
            continue
        picked.append(j)
        numeric.append(d)
        if len(picked) == min(n_coords, point.size):
            break
    assert len(picked) >= min(n_coords, point.size) * 0.9, "too many coordinates sit next to a relu kink"
    return analytic[picked], np.array(numeric)


def assert_close_rel(a, b, rtol=1e-3, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    err = np.abs(a - b)
    bound = rtol * np.maximum(np.abs(a), np.abs(b)) + floor
    bad = np.flatnonzero(err > bound)
    assert bad.size == 0, f"{bad.size} coordinates off, worst {err[bad].max():.3e} at {a[bad][:3]} vs {b[bad][:3]}"


def delta_tape(model, ds):
    """delta as a tape scalar (means inside the graph), so the oracle sees the full function."""
    k = ds.num_classes
    counts = ds.class_counts
    out = forward(model, ds.x)
    onehot = np.eye(k)[ds.y]
    f = (out.softmax(axis=1) * onehot).sum(axis=1).reshape(1, -1)
    means = T.matmul(f, Tensor(onehot / counts))
    resid = f - T.matmul(means, Tensor(onehot.T.copy()))
    return (resid * resid * Tensor((1.0 / (k * counts[ds.y])).reshape(1, -1))).sum()


def delta_tape_grads(model, ds, which):
    rep = delta_exact_tape(model, ds, which)
    leaves = model.prunable() if which == "masks" else model.params
    return [rep.grads[p.name] for p in leaves]


@pytest.fixture
def mlp():
    return tiny_mlp(0)


@pytest.fixture
def cnn():
    return tiny_cnn(0)


def tiny_config(**over) -> dict:
    """A seconds-scale synthetic experiment config for pipeline and CLI tests."""
    src = {"kind": "synthetic", "num_classes": 3, "per_class": 40, "dim": 4, "separation": 3.0, "seed": 7}
    cfg = {
        "task": {"source": src, "val_source": {**src, "per_class": 20}},
        "teachers": [{"name": "big", "arch": "mlp-l"}],
        "student": {"arch": "mlp-s"},
        "train": {"epochs": 3, "batchsize": 16, "schedule": []},
        "pruning": {"teachers": ["big"], "methods": ["prue"], "sparsity": [0.5], "batchsize": 64},
        "seeds": [0],
    }
    for k, v in over.items():
        cfg[k] = v
    return cfg
