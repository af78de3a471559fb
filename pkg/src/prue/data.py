"""Labeled datasets: IDX and CIFAR-10 binary readers, synthetic blobs, batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 3073


class DataFormatError(ValueError):
    """A dataset file is malformed (bad magic, truncated, bad label)."""


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        self.x.flags.writeable = False
        self.y.flags.writeable = False

    def __len__(self) -> int:
        return len(self.y)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.x.shape[1:])

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)

    def take(self, idx: np.ndarray, split: str | None = None) -> Dataset:
        return Dataset(self.x[idx], self.y[idx], self.num_classes, split or self.split)

    def astype(self, dtype) -> Dataset:
        return Dataset(self.x.astype(dtype), self.y, self.num_classes, self.split)


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    soft: np.ndarray | None = field(default=None)
    index: np.ndarray | None = field(default=None)

    def __len__(self) -> int:
        return len(self.y)


# -- IDX ------------------------------------------------------------------------
def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_bytes(path) -> bytes:
    with _open(path) as f:
        return f.read()


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Read an unsigned-byte IDX file into a uint8 array."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header at byte offset {len(raw)} (need 4)")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise DataFormatError(f"{path}: magic {magic} at byte offset 0, expected {expected_magic}")
    if magic >> 8 != 0x08:
        raise DataFormatError(f"{path}: magic {magic:#010x} at byte offset 0 is not an unsigned-byte IDX")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header at byte offset {len(raw)} (need {header})")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims))
    if len(raw) - header < n:
        raise DataFormatError(
            f"{path}: truncated payload at byte offset {len(raw)}; expected {header + n} bytes"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError("write_idx stores unsigned bytes only")
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(header + array.tobytes())


def load_idx(images_path, labels_path, num_classes: int = 10, split: str = "train") -> Dataset:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise DataFormatError(f"{images_path}: {len(images)} images but {labels_path}: {len(labels)} labels")
    _check_labels(labels, num_classes, labels_path, offset=8)
    x = images.astype(np.float32) / 255.0
    return Dataset(x, labels.astype(np.int64), num_classes, split)


def _check_labels(labels, num_classes, path, offset, stride=1):
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise DataFormatError(
            f"{path}: label {int(labels[i])} >= {num_classes} at byte offset {offset + i * stride}"
        )


# -- CIFAR-10 binary ---------------------------------------------------------------
def load_cifar10_binary(paths, num_classes: int = 10, split: str = "train") -> Dataset:
    """Read one or more CIFAR-10 binary batch files (1 label byte + 3072 pixels)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    xs, ys = [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            whole = len(raw) // CIFAR_RECORD * CIFAR_RECORD
            raise DataFormatError(
                f"{path}: truncated record at byte offset {whole}; "
                f"file size {len(raw)} is not a multiple of {CIFAR_RECORD}"
            )
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        _check_labels(rec[:, 0], num_classes, path, offset=0, stride=CIFAR_RECORD)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0)
    return Dataset(np.concatenate(xs), np.concatenate(ys), num_classes, split)


def write_cifar10_binary(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), 3072)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    Path(path).write_bytes(rec.tobytes())


# -- synthetic and bundled data -------------------------------------------------------
def synthetic_blobs(
    num_classes: int = 3,
    per_class: int = 100,
    dim: int = 2,
    separation: float = 6.0,
    seed: int = 0,
    split: str = "train",
    dtype=np.float32,
) -> Dataset:
    """Unit-variance Gaussian blobs whose closest centers are ``separation`` apart.

    Centers are fixed by ``(num_classes, dim, separation)``; ``seed`` drives the noise.

    The validation split draws from the same centers with an independent stream.
    """
    if dim >= num_classes:
        # scaled basis vectors: every pair of centers is ``separation`` apart
        centers = np.eye(num_classes, dim) * separation / np.sqrt(2)
    elif dim == 1:
        centers = (np.arange(num_classes) - (num_classes - 1) / 2)[:, None] * separation
    else:
        # regular polygon in the first two coordinates; neighbours ``separation`` apart
        angle = 2 * np.pi * np.arange(num_classes) / num_classes
        radius = separation / (2 * np.sin(np.pi / num_classes))
        centers = np.zeros((num_classes, dim))
        centers[:, 0], centers[:, 1] = radius * np.cos(angle), radius * np.sin(angle)
    offset = {"train": 1, "val": 2, "test": 3}.get(split, 4)
    rng = np.random.default_rng([seed, offset])
    y = np.repeat(np.arange(num_classes), per_class)
    x = centers[y] + rng.standard_normal((len(y), dim))
    return Dataset(x.astype(dtype), y.astype(np.int64), num_classes, split)


def digits_to_idx(directory, train_per_class: int = 120, seed: int = 0) -> dict[str, Path]:
    """Write scikit-learn's bundled 8x8 handwritten digits as IDX train/val files.

    Pixel intensities 0..16 are rescaled to 0..255.  ``train_per_class`` samples
    of every class go to the train files; the remainder forms the val files.
    """
    from sklearn.datasets import load_digits

    bunch = load_digits()
    images = np.rint(bunch.images * (255.0 / 16.0)).astype(np.uint8)
    labels = bunch.target.astype(np.uint8)
    rng = np.random.default_rng(seed)
    train_idx = []
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        train_idx.append(np.sort(rng.choice(idx, size=train_per_class, replace=False)))
    train_idx = np.concatenate(train_idx)
    val_idx = np.setdiff1d(np.arange(len(labels)), train_idx)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, idx in (("train", train_idx), ("val", val_idx)):
        paths[f"{split}_images"] = directory / f"digits-{split}-images-idx3-ubyte"
        paths[f"{split}_labels"] = directory / f"digits-{split}-labels-idx1-ubyte"
        write_idx(paths[f"{split}_images"], images[idx])
        write_idx(paths[f"{split}_labels"], labels[idx])
    return paths


def noisy_digits(
    per_class: int = 1000,
    noise: float = 0.3,
    seed: int = 0,
    split: str = "train",
    base_train_per_class: int = 120,
) -> Dataset:
    """A harder, larger task built from scikit-learn's 8x8 digits.

    The bundled images are split once (fixed seed) into disjoint train and val
    base pools, ``base_train_per_class`` per class for train.  Each generated
    sample is a base image from the split's pool, rolled by up to one pixel in
    each direction, plus Gaussian pixel noise of std ``noise`` (intensities in
    [0, 1]), clipped and quantized to bytes so it round-trips through IDX.
    """
    from sklearn.datasets import load_digits

    bunch = load_digits()
    images = bunch.images / 16.0
    labels = bunch.target
    pool_rng = np.random.default_rng(20240601)
    pools = {"train": [], "val": []}
    for c in range(10):
        idx = pool_rng.permutation(np.flatnonzero(labels == c))
        pools["train"].append(idx[:base_train_per_class])
        pools["val"].append(idx[base_train_per_class:])
    key = "train" if split == "train" else "val"
    rng = np.random.default_rng([seed, {"train": 1, "val": 2}.get(split, 3)])
    xs, ys = [], []
    for c in range(10):
        pick = rng.choice(pools[key][c], size=per_class)
        shifts = rng.integers(-1, 2, size=(per_class, 2))
        batch = np.stack([np.roll(images[i], tuple(s), axis=(0, 1)) for i, s in zip(pick, shifts)])
        batch = batch + noise * rng.standard_normal(batch.shape)
        xs.append(np.rint(np.clip(batch, 0.0, 1.0) * 255.0).astype(np.uint8))
        ys.append(np.full(per_class, c, dtype=np.int64))
    x = np.concatenate(xs).astype(np.float32) / 255.0
    return Dataset(x, np.concatenate(ys), 10, split)


def standardize(train: Dataset, *others: Dataset, per_channel: bool = True):
    """Standardize with statistics of ``train``; returns the transformed datasets."""
    x = train.x
    if per_channel and x.ndim == 4:
        axes = (0, 2, 3)
    else:
        axes = 0 if per_channel and x.ndim == 2 else None
    mu = x.mean(axis=axes, keepdims=True)
    sd = x.std(axis=axes, keepdims=True)
    sd = np.where(sd > 1e-8, sd, 1.0)
    out = [Dataset(((d.x - mu) / sd).astype(d.x.dtype), d.y, d.num_classes, d.split) for d in (train, *others)]
    return out if others else out[0]


def load_dataset(source: dict) -> Dataset:
    """Load from a source description.

    ``{"kind": "idx", "images": ..., "labels": ..., "num_classes": 10}``,
    ``{"kind": "cifar10", "paths": [...]}``,
    ``{"kind": "noisy-digits", "per_class": 1000, "noise": 0.3, "seed": 0}`` or
    ``{"kind": "synthetic", "num_classes": 3, "per_class": 100, "dim": 2,
    "separation": 6.0, "seed": 7}``.  An optional ``"split"`` tags the result.
    """
    kind = source.get("kind")
    split = source.get("split", "train")
    if kind == "idx":
        return load_idx(source["images"], source["labels"], source.get("num_classes", 10), split)
    if kind == "cifar10":
        return load_cifar10_binary(source["paths"], source.get("num_classes", 10), split)
    if kind == "noisy-digits":
        return noisy_digits(
            source.get("per_class", 1000),
            source.get("noise", 0.3),
            source.get("seed", 0),
            split,
            source.get("base_train_per_class", 120),
        )
    if kind == "synthetic":
        return synthetic_blobs(
            source.get("num_classes", 3),
            source.get("per_class", 100),
            source.get("dim", 2),
            source.get("separation", 6.0),
            source.get("seed", 0),
            split,
        )
    raise ValueError(f"unknown dataset kind {kind!r}")


# -- iteration ----------------------------------------------------------------------
def iterate(dataset: Dataset, batchsize: int, order: str = "shuffled", seed: int | None = 0) -> Iterator[Batch]:
    """Yield batches in a seeded shuffled order, sequential order, or class-sorted.

    ``class_sorted`` cuts batches at class boundaries so every batch holds a
    single label.
    """
    if batchsize < 1:
        raise ValueError("batchsize must be >= 1")
    n = len(dataset)
    if order == "shuffled":
        idx = np.random.default_rng(seed).permutation(n)
        for start in range(0, n, batchsize):
            sel = idx[start:start + batchsize]
            yield Batch(dataset.x[sel], dataset.y[sel], index=sel)
    elif order == "sequential":
        for start in range(0, n, batchsize):
            sel = np.arange(start, min(start + batchsize, n))
            yield Batch(dataset.x[sel], dataset.y[sel], index=sel)
    elif order == "class_sorted":
        idx = np.argsort(dataset.y, kind="stable")
        labels = dataset.y[idx]
        bounds = np.flatnonzero(np.diff(labels)) + 1
        for group in np.split(idx, bounds):
            for start in range(0, len(group), batchsize):
                sel = group[start:start + batchsize]
                yield Batch(dataset.x[sel], dataset.y[sel], index=sel)
    else:
        raise ValueError(f"unknown order {order!r}")


def subset(dataset: Dataset, per_class: int, seed: int = 0) -> Dataset:
    """Stratified sample with exactly ``per_class`` samples of every class."""
    counts = dataset.class_counts
    if per_class > counts.min():
        raise ValueError(f"per_class={per_class} exceeds smallest class count {int(counts.min())}")
    rng = np.random.default_rng(seed)
    picks = [rng.choice(np.flatnonzero(dataset.y == c), size=per_class, replace=False) for c in range(dataset.num_classes)]
    idx = np.concatenate(picks)
    return dataset.take(idx[rng.permutation(len(idx))])
