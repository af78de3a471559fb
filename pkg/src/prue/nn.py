"""Small masked MLP/CNN families used as teachers and students.

Every prunable weight ``w`` has a binary mask ``m`` of the same shape and the
forward pass always uses the effective weight ``m * w``.  The product is
recorded on the tape, so gradients with respect to masks are available by
setting ``requires_grad`` on them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class Layer:
    """One layer of an :class:`ArchitectureSpec`.

    ``kind`` is ``"dense"``, ``"conv"``, ``"pool"`` (average pooling) or
    ``"flatten"``.  Dense layers use ``fan_in``/``fan_out``; conv layers use
    them as in/out channels with a square ``kernel`` and same-padding.
    """

    kind: str
    fan_in: int = 0
    fan_out: int = 0
    kernel: int = 3
    activation: str | None = None
    size: int = 2

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    num_classes: int

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ArchitectureSpec:
        return cls(
            name=d["name"],
            input_shape=tuple(d["input_shape"]),
            layers=tuple(Layer(**layer) for layer in d["layers"]),
            num_classes=int(d["num_classes"]),
        )

    def validate(self) -> list[tuple[int, ...]]:
        """Propagate shapes through the layers; return the shape after each."""
        shape = tuple(self.input_shape)
        shapes = []
        prev = "input"
        for idx, layer in enumerate(self.layers):
            here = f"layer {idx} ({layer.kind})"
            if layer.kind == "dense":
                if len(shape) != 1 or shape[0] != layer.fan_in:
                    raise ValueError(
                        f"{prev} -> {here}: output shape {shape} does not match fan_in {layer.fan_in}"
                    )
                shape = (layer.fan_out,)
            elif layer.kind == "conv":
                if len(shape) != 3 or shape[0] != layer.fan_in:
                    raise ValueError(
                        f"{prev} -> {here}: output shape {shape} does not match in_channels {layer.fan_in}"
                    )
                if layer.kernel % 2 != 1:
                    raise ValueError(f"{here}: kernel size must be odd for same padding")
                shape = (layer.fan_out, shape[1], shape[2])
            elif layer.kind == "pool":
                if len(shape) != 3 or shape[1] % layer.size or shape[2] % layer.size:
                    raise ValueError(f"{prev} -> {here}: cannot pool shape {shape} by {layer.size}")
                shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            else:
                raise ValueError(f"{here}: unknown layer kind {layer.kind!r}")
            if layer.activation not in (None, "relu"):
                raise ValueError(f"{here}: unknown activation {layer.activation!r}")
            shapes.append(shape)
            prev = here
        if shape != (self.num_classes,):
            raise ValueError(f"{prev} -> output: final shape {shape} != ({self.num_classes},)")
        return shapes


# -- desk-scale families --------------------------------------------------------
def mlp_s(input_dim: int = 784, num_classes: int = 10) -> ArchitectureSpec:
    return ArchitectureSpec(
        "mlp-s",
        (input_dim,),
        (Layer("dense", input_dim, 64, activation="relu"), Layer("dense", 64, num_classes)),
        num_classes,
    )


def mlp_l(input_dim: int = 784, num_classes: int = 10) -> ArchitectureSpec:
    return ArchitectureSpec(
        "mlp-l",
        (input_dim,),
        (
            Layer("dense", input_dim, 256, activation="relu"),
            Layer("dense", 256, 128, activation="relu"),
            Layer("dense", 128, num_classes),
        ),
        num_classes,
    )


def _cnn(name, input_shape, channels, pool_after, num_classes):
    c, h, w = input_shape
    layers = []
    for i, out in enumerate(channels):
        layers.append(Layer("conv", c, out, kernel=3, activation="relu"))
        c = out
        if i in pool_after and h % 2 == 0 and w % 2 == 0:
            layers.append(Layer("pool", size=2))
            h, w = h // 2, w // 2
    layers.append(Layer("flatten"))
    layers.append(Layer("dense", c * h * w, num_classes))
    return ArchitectureSpec(name, tuple(input_shape), tuple(layers), num_classes)


def cnn_s(input_shape=(1, 28, 28), num_classes: int = 10) -> ArchitectureSpec:
    return _cnn("cnn-s", input_shape, (8, 16), {0, 1}, num_classes)


def cnn_l(input_shape=(1, 28, 28), num_classes: int = 10) -> ArchitectureSpec:
    return _cnn("cnn-l", input_shape, (16, 32, 64), {1, 2}, num_classes)


FAMILIES = {"mlp-s": mlp_s, "mlp-l": mlp_l, "cnn-s": cnn_s, "cnn-l": cnn_l}


def family(name: str, input_shape, num_classes: int) -> ArchitectureSpec:
    """Instantiate a named family for a dataset's input shape and class count."""
    if name not in FAMILIES:
        raise KeyError(f"unknown architecture {name!r}; choose from {sorted(FAMILIES)}")
    input_shape = tuple(input_shape)
    if name.startswith("mlp"):
        return FAMILIES[name](int(np.prod(input_shape)), num_classes)
    if len(input_shape) == 2:
        input_shape = (1, *input_shape)
    return FAMILIES[name](input_shape, num_classes)


# -- masked parameter set -------------------------------------------------------
@dataclass
class Param:
    name: str
    weight: Tensor
    mask: Tensor | None  # None for non-prunable parameters (biases)

    @property
    def prunable(self) -> bool:
        return self.mask is not None


@dataclass
class MaskedModel:
    """Weights paired with binary masks; the effective weight is ``m * w``."""

    spec: ArchitectureSpec
    params: list[Param] = field(default_factory=list)

    # enumeration order is layer order, weight before bias
    def __iter__(self) -> Iterator[Param]:
        return iter(self.params)

    def __getitem__(self, name: str) -> Param:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def dtype(self) -> np.dtype:
        return self.params[0].weight.dtype

    def prunable(self) -> list[Param]:
        return [p for p in self.params if p.prunable]

    def weights(self) -> list[Tensor]:
        return [p.weight for p in self.params]

    def masks(self) -> list[Tensor]:
        return [p.mask for p in self.params if p.mask is not None]

    @property
    def num_params(self) -> int:
        return int(np.sum([p.weight.size for p in self.params]))

    @property
    def num_prunable(self) -> int:
        return int(np.sum([p.weight.size for p in self.prunable()]))

    def copy(self) -> MaskedModel:
        return MaskedModel(
            self.spec,
            [
                Param(
                    p.name,
                    Tensor(p.weight.data.copy(), requires_grad=p.weight.requires_grad),
                    None if p.mask is None else Tensor(p.mask.data.copy()),
                )
                for p in self.params
            ],
        )

    def set_masks(self, masks: dict[str, np.ndarray] | list[np.ndarray]) -> None:
        prunable = self.prunable()
        if not isinstance(masks, dict):
            masks = {p.name: m for p, m in zip(prunable, masks)}
        for p in prunable:
            m = np.asarray(masks[p.name])
            if m.shape != p.weight.shape:
                raise ShapeError(f"mask for {p.name}: shape {m.shape} != weight shape {p.weight.shape}")
            if not np.isin(m, (0, 1)).all():
                raise ValueError(f"mask for {p.name} is not binary")
            p.mask = Tensor(m.astype(self.dtype))

    def flat_weights(self) -> np.ndarray:
        """Prunable weights concatenated in enumeration order."""
        return np.concatenate([p.weight.data.ravel() for p in self.prunable()])

    def flat_masks(self) -> np.ndarray:
        return np.concatenate([p.mask.data.ravel() for p in self.prunable()])

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        if len(flat) != self.num_prunable:
            raise ShapeError(f"unflatten: expected {self.num_prunable} values, got {len(flat)}")
        out, offset = {}, 0
        for p in self.prunable():
            n = p.weight.size
            out[p.name] = np.asarray(flat[offset:offset + n]).reshape(p.weight.shape)
            offset += n
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(p.name.encode())
            h.update(p.weight.data.tobytes())
            if p.mask is not None:
                h.update(p.mask.data.tobytes())
        return h.hexdigest()


def build_model(spec: ArchitectureSpec, init_seed: int, dtype=np.float32) -> MaskedModel:
    """Initialize weights uniformly in +-sqrt(1/fan_in), biases likewise; masks all ones."""
    spec.validate()
    rng = np.random.default_rng(init_seed)
    params = []
    for idx, layer in enumerate(spec.layers):
        if layer.kind == "dense":
            shape, fan_in = (layer.fan_in, layer.fan_out), layer.fan_in
            bshape = (layer.fan_out,)
        elif layer.kind == "conv":
            shape = (layer.fan_out, layer.fan_in, layer.kernel, layer.kernel)
            fan_in = layer.fan_in * layer.kernel**2
            bshape = (layer.fan_out, 1, 1)
        else:
            continue
        bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape).astype(dtype)
        b = rng.uniform(-bound, bound, size=bshape).astype(dtype)
        params.append(Param(f"{idx}.weight", Tensor(w, requires_grad=True), Tensor(np.ones(shape, dtype))))
        params.append(Param(f"{idx}.bias", Tensor(b, requires_grad=True), None))
    return MaskedModel(spec, params)


def forward(model: MaskedModel, x) -> Tensor:
    """Logits ``[B, K]`` computed with effective weights ``m * w``."""
    x = x if isinstance(x, Tensor) else Tensor(x, dtype=model.dtype)
    expected = tuple(model.spec.input_shape)
    if tuple(x.shape[1:]) != expected:
        if int(np.prod(x.shape[1:])) == int(np.prod(expected)):
            x = x.reshape((x.shape[0], *expected))
        else:
            raise ShapeError(f"forward: batch input shape {x.shape[1:]} != model input shape {expected}")
    by_name = {p.name: p for p in model.params}
    h = x
    for idx, layer in enumerate(model.spec.layers):
        if layer.kind in ("dense", "conv"):
            wp, bp = by_name[f"{idx}.weight"], by_name[f"{idx}.bias"]
            w_eff = wp.weight * wp.mask
            if layer.kind == "dense":
                h = T.matmul(h, w_eff) + bp.weight
            else:
                h = T.conv2d(h, w_eff, padding=layer.kernel // 2) + bp.weight
        elif layer.kind == "pool":
            B, C, H, W = h.shape
            s = layer.size
            h = h.reshape(B, C, H // s, s, W // s, s).mean(axis=(3, 5))
        elif layer.kind == "flatten":
            h = h.reshape(h.shape[0], -1)
        if layer.activation == "relu":
            h = T.relu(h)
    return h


def predict_proba(model: MaskedModel, x, batchsize: int = 1024) -> np.ndarray:
    """Softmax predictions without recording a tape."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    out = []
    with T.no_grad():
        for start in range(0, len(x), batchsize):
            out.append(forward(model, x[start:start + batchsize]).softmax(axis=-1).data)
    return np.concatenate(out) if out else np.zeros((0, model.spec.num_classes))


def logits(model: MaskedModel, x, batchsize: int = 1024) -> np.ndarray:
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    out = []
    with T.no_grad():
        for start in range(0, len(x), batchsize):
            out.append(forward(model, x[start:start + batchsize]).data)
    return np.concatenate(out) if out else np.zeros((0, model.spec.num_classes))


def sparsity_report(model: MaskedModel) -> dict:
    """Per-layer and global zero fractions over prunable weights only."""
    layers = {}
    zeros = 0
    for p in model.prunable():
        z = int(p.weight.size - np.count_nonzero(p.mask.data))
        zeros += z
        layers[p.name] = z / p.weight.size
    total = model.num_prunable
    return {"global": zeros / total if total else 0.0, "zeros": zeros, "prunable": total, "layers": layers}
