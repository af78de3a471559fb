"""Dense tensors with a small reverse-mode differentiation tape.

Every primitive returns a new :class:`Tensor`.  When gradient recording is
enabled and at least one input requires a gradient, the output keeps a
reference to its inputs together with a pullback closure.  Creation order is
tracked with a global sequence counter, so replaying pullbacks in decreasing
sequence order is a valid reverse topological order.

``backward`` consumes the recorded graph: pullbacks are released after use and
a second call on the same loss raises :class:`TapeError`.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "TapeError",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "matmul",
    "conv2d",
    "add",
    "sub",
    "mul",
    "relu",
    "log",
    "exp",
    "sum",
    "mean",
    "softmax",
    "log_softmax",
    "reshape",
    "broadcast_to",
    "backward",
    "finite_difference_gradient",
]

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_seq = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Input shapes do not satisfy a primitive's shape rule."""


class NumericError(ArithmeticError):
    """A forward result contains NaN or Inf."""


class TapeError(RuntimeError):
    """Misuse of the differentiation tape."""


@contextlib.contextmanager
def no_grad():
    """Detach mode: primitives evaluated inside record nothing."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in _DTYPES else np.float64
    dtype = np.dtype(dtype)
    if dtype not in _DTYPES:
        raise TypeError(f"unsupported dtype {dtype}; use float32 or float64")
    return np.asarray(arr, dtype=dtype, order="C")


class Tensor:
    """A dense float32/float64 array that can take part in differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._pullback: Callable | None = None
        self._op = "leaf"
        self._seq = next(_seq)
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._pullback is None and not self._consumed

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.dtype)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}, dtype={self.dtype}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not a supported primitive")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def softmax(self, axis=-1):
        return softmax(self, axis)

    def log_softmax(self, axis=-1):
        return log_softmax(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, Tensor]:
        return backward(self, wrt)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _finite(name: str, out: np.ndarray) -> np.ndarray:
    if not np.isfinite(out).all():
        raise NumericError(f"{name}: non-finite value in forward result")
    return out


def _make(name: str, out: np.ndarray, inputs: Sequence[Tensor], pullback: Callable) -> Tensor:
    """Wrap a forward result and record a tape entry when needed."""
    result = Tensor(_finite(name, out))
    if _grad_enabled and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result._parents = tuple(inputs)
        result._pullback = pullback
        result._op = name
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("add", a, b)
    with np.errstate(all="ignore"):
        out = a.data + b.data

    def pullback(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", out, (a, b), pullback)


def sub(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("sub", a, b)
    with np.errstate(all="ignore"):
        out = a.data - b.data

    def pullback(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", out, (a, b), pullback)


def mul(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("mul", a, b)
    with np.errstate(all="ignore"):
        out = a.data * b.data

    def pullback(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("mul", out, (a, b), pullback)


def relu(x: Tensor) -> Tensor:
    x = _lift(x)
    out = np.maximum(x.data, 0)

    def pullback(g):
        return (g * (x.data > 0),)

    return _make("relu", out, (x,), pullback)


def log(x: Tensor) -> Tensor:
    x = _lift(x)
    with np.errstate(all="ignore"):
        out = np.log(x.data)

    def pullback(g):
        return (g / x.data,)

    return _make("log", out, (x,), pullback)


def exp(x: Tensor) -> Tensor:
    x = _lift(x)
    with np.errstate(all="ignore"):
        out = np.exp(x.data)

    def pullback(g):
        return (g * out,)

    return _make("exp", out, (x,), pullback)


# -- reductions and shape ops -------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _lift(x)
    axes = _norm_axis(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)

    def pullback(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", np.asarray(out, dtype=x.dtype), (x,), pullback)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean: empty reduction over axes {axes} of shape {x.shape}")
    out = np.mean(x.data, axis=axes, keepdims=keepdims)

    def pullback(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make("mean", np.asarray(out, dtype=x.dtype), (x,), pullback)


def reshape(x: Tensor, shape) -> Tensor:
    x = _lift(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def pullback(g):
        return (g.reshape(x.shape),)

    return _make("reshape", out, (x,), pullback)


def broadcast_to(x: Tensor, shape) -> Tensor:
    x = _lift(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None

    def pullback(g):
        return (_unbroadcast(g, x.shape),)

    return _make("broadcast_to", out, (x,), pullback)


# -- softmax family -----------------------------------------------------------
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _lift(x)
    # max-subtraction keeps exp() in range without changing the value
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def pullback(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (x,), pullback)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _lift(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def pullback(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", out, (x,), pullback)


# -- linear algebra -------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    with np.errstate(all="ignore"):
        out = a.data @ b.data

    def pullback(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make("matmul", out, (a, b), pullback)


def conv2d(x: Tensor, w: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation of ``x [B,C,H,W]`` with ``w [O,C,kh,kw]``.

    Computed directly as a sum over kernel offsets, one tensordot per offset.
    """
    x, w = _lift(x), _lift(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    p = int(padding)
    Ho, Wo = H + 2 * p - kh + 1, W + 2 * p - kw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    out = np.zeros((B, Ho, Wo, O), dtype=np.result_type(x.dtype, w.dtype))
    with np.errstate(all="ignore"):
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i:i + Ho, j:j + Wo]
                out += np.tensordot(patch, w.data[:, :, i, j], axes=([1], [1]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def pullback(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    # [B,O,Ho,Wo] x [O,C] -> [B,Ho,Wo,C]
                    contrib = np.tensordot(g, w.data[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, i:i + Ho, j:j + Wo] += contrib.transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, :, i:i + Ho, j:j + Wo]
                    gw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gw

    return _make("conv2d", out, (x, w), pullback)


# -- reverse pass ---------------------------------------------------------------
def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, Tensor]:
    """Differentiate a scalar ``loss`` and consume its tape.

    Returns a map from every reached leaf that requires a gradient to
    d(loss)/d(leaf).  Leaves listed in ``wrt`` but not reachable from the
    loss map to zeros.  Each reached leaf also has its ``.grad`` set.
    """
    if loss.size != 1:
        raise TapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss._consumed:
        raise TapeError("backward: tape already consumed; re-run the forward pass")
    if not loss.requires_grad:
        raise TapeError("backward: loss was not recorded on a tape (no input requires grad)")

    # collect the graph reachable from the loss
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: list[Tensor] = []
    for node in sorted(nodes.values(), key=lambda t: t._seq, reverse=True):
        g = grads.pop(id(node), None) if node._pullback is not None else grads.get(id(node))
        if node._pullback is None:
            leaves.append(node)
            continue
        if g is not None:
            for parent, pg in zip(node._parents, node._pullback(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                grads[pid] = grads[pid] + pg if pid in grads else pg
        node._parents = ()
        node._pullback = None
        node._consumed = True

    result: dict[Tensor, Tensor] = {}
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = Tensor(np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape))
        result[leaf] = leaf.grad
    for leaf in wrt or ():
        if leaf not in result:
            leaf.grad = Tensor(np.zeros_like(leaf.data))
            result[leaf] = leaf.grad
    return result


def finite_difference_gradient(
    fn: Callable[[Tensor], Tensor | float],
    point: Tensor | np.ndarray,
    eps: float = 1e-3,
    indices: Sequence[int] | None = None,
) -> Tensor:
    """Central-difference gradient of a scalar function.

    ``indices`` restricts evaluation to those flat coordinates; the remaining
    entries of the result are left at zero.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    if not np.isfinite(base).all():
        raise NumericError("finite_difference_gradient: point is not finite")
    dtype = point.dtype if isinstance(point, Tensor) else base.dtype
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)

    def evaluate(values: np.ndarray) -> float:
        with no_grad():
            v = fn(Tensor(values.reshape(base.shape), dtype=dtype))
        v = v.item() if isinstance(v, Tensor) else float(v)
        if not np.isfinite(v):
            raise NumericError("finite_difference_gradient: fn returned a non-finite value")
        return v

    for j in range(flat.size) if indices is None else indices:
        plus, minus = flat.copy(), flat.copy()
        plus[j] += eps
        minus[j] -= eps
        grad[j] = (evaluate(plus) - evaluate(minus)) / (2 * eps)
    return Tensor(grad.reshape(base.shape), dtype=dtype)
