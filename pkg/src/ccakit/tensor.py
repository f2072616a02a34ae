"""Dense tensors with reverse-mode gradients.

The feature-map convention throughout the package is a rank-4 array laid out
as (batch, channel, height, width), row-major.  Token matrices are rank-2
(tokens, width).  Two numeric modes exist: float32 for production forwards and
float64 for verification (oracle equivalence and finite-difference gradient
checks run in float64).

Reduction order matters here.  Every forward kernel in this package is
required to reproduce its naive loop oracle bit-for-bit in float64, so
reductions on the forward path accumulate sequentially along the reduced axis
(see ``softmax_channels``) instead of using numpy's pairwise ``sum``.
Backward passes are only held to finite-difference tolerances and are free to
use ordinary numpy reductions.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand extents are incompatible with an operation."""


class DTypeError(TypeError):
    """Raised on unsupported or mismatched element types."""


_TAG_TO_DTYPE = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}
_DTYPE_TO_TAG = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def resolve_dtype(dtype) -> np.dtype:
    """Map a dtype tag ("f32"/"f64") or numpy dtype to a canonical numpy dtype."""
    if isinstance(dtype, str):
        try:
            return _TAG_TO_DTYPE[dtype]
        except KeyError:
            raise DTypeError(f"unknown dtype tag {dtype!r}; expected 'f32' or 'f64'")
    dt = np.dtype(dtype)
    if dt not in _DTYPE_TO_TAG:
        raise DTypeError(f"unsupported dtype {dt}; expected float32 or float64")
    return dt


def dtype_tag(dtype) -> str:
    return _DTYPE_TO_TAG[resolve_dtype(dtype)]


class Tensor:
    """A numpy-backed value node in a reverse-mode computation graph.

    ``data`` is never aliased mutably by ops; forward functions allocate fresh
    arrays, which keeps tensors value-semantic and safe to share read-only.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if dtype is not None:
            arr = np.asarray(data, dtype=resolve_dtype(dtype))
        else:
            arr = np.asarray(data)
            if arr.dtype not in _DTYPE_TO_TAG:
                raise DTypeError(
                    f"tensor data must be float32 or float64, got {arr.dtype}; "
                    "pass dtype= to convert explicitly"
                )
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # ------------------------------------------------------------------ basics
    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> str:
        return _DTYPE_TO_TAG[self.data.dtype]

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ---------------------------------------------------------------- autodiff
    def backward(self) -> None:
        """Backpropagate from a scalar node, accumulating into leaf ``grad``s."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got dims {self.dims}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # ---------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0)) if isinstance(other, Tensor) else NotImplemented

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _scalar_err():
    raise ShapeError("item() requires a single-element tensor")


def _op(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    """Build a graph node; the backward callable maps out-grad -> parent grads."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = any(p.requires_grad for p in parents)
    if t.requires_grad:
        t._parents = parents
        t._backward = backward
    else:
        t._parents = ()
        t._backward = None
    return t


def _check_same_dtype(*tensors: Tensor) -> np.dtype:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise DTypeError(f"mixed dtypes {dt} and {t.data.dtype}")
    return dt


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -------------------------------------------------------------------- creation

def zeros(shape: Sequence[int], dtype="f32", requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=resolve_dtype(dtype)), requires_grad=requires_grad)


def full(shape: Sequence[int], value: float, dtype="f32", requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(tuple(shape), value, dtype=resolve_dtype(dtype)), requires_grad=requires_grad)


def uniform(rng: np.random.Generator, shape: Sequence[int], bound: float, dtype="f32",
            requires_grad: bool = False) -> Tensor:
    """Uniform values in (-bound, bound), drawn in float64 then cast to dtype."""
    data = rng.uniform(-bound, bound, size=tuple(shape)).astype(resolve_dtype(dtype))
    return Tensor(data, requires_grad=requires_grad)


# ------------------------------------------------------------------ elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.dims != b.dims:
        raise ShapeError(f"add: dims mismatch {a.dims} vs {b.dims}")
    out = a.data + b.data

    def backward(g):
        return g, g

    return _op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; numpy broadcasting is allowed (grads are summed back)."""
    _check_same_dtype(a, b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: dims not broadcastable {a.dims} vs {b.dims}")

    def backward(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _op(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    out = a.data * s

    def backward(g):
        return (g * s,)

    return _op(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    """1 / (1 + exp(-x)). Saturates to exactly 0/1 in the far tails."""
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-a.data))
    out = out.astype(a.data.dtype, copy=False)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _op(out, (a,), backward)


def sigmoid_data(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return (1.0 / (1.0 + np.exp(-x))).astype(x.dtype, copy=False)


# ------------------------------------------------------------------- reductions

def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.data.dtype).reshape(())

    def backward(g):
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _op(out, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.sum() / n, dtype=a.data.dtype).reshape(())

    def backward(g):
        return (np.broadcast_to(g / n, a.data.shape).copy(),)

    return _op(out, (a,), backward)


# -------------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.dims} as {shape}")
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return _op(out, (a,), backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-4 tensors along the channel axis."""
    if not xs:
        raise ShapeError("concat_channels: empty input list")
    _check_same_dtype(*xs)
    first = xs[0]
    if first.ndim != 4:
        raise ShapeError(f"concat_channels: rank-4 tensors required, got {first.dims}")
    for x in xs[1:]:
        if x.ndim != 4 or x.dims[0] != first.dims[0] or x.dims[2:] != first.dims[2:]:
            raise ShapeError(f"concat_channels: non-channel dims differ: {first.dims} vs {x.dims}")
    out = np.concatenate([x.data for x in xs], axis=1)
    splits = np.cumsum([x.dims[1] for x in xs])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=1))

    return _op(out, tuple(xs), backward)


def split_channels(x: Tensor, k: int) -> list[Tensor]:
    """Split a rank-4 tensor into k equal channel groups, in order."""
    if x.ndim != 4:
        raise ShapeError(f"split_channels: rank-4 tensor required, got {x.dims}")
    c = x.dims[1]
    if k <= 0 or c % k != 0:
        raise ShapeError(f"split_channels: {c} channels not divisible into {k} groups")
    step = c // k
    pieces = []
    for i in range(k):
        lo = i * step
        out = np.ascontiguousarray(x.data[:, lo:lo + step])

        def backward(g, lo=lo):
            full_g = np.zeros_like(x.data)
            full_g[:, lo:lo + step] = g
            return (full_g,)

        pieces.append(_op(out, (x,), backward))
    return pieces


def concat_batch(xs: Sequence[Tensor]) -> Tensor:
    """Stack rank-4 single-batch tensors along the batch axis."""
    if not xs:
        raise ShapeError("concat_batch: empty input list")
    _check_same_dtype(*xs)
    tail = xs[0].dims[1:]
    for x in xs:
        if x.ndim != 4 or x.dims[1:] != tail:
            raise ShapeError("concat_batch: per-element dims differ")
    out = np.concatenate([x.data for x in xs], axis=0)
    splits = np.cumsum([x.dims[0] for x in xs])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=0))

    return _op(out, tuple(xs), backward)


# -------------------------------------------------------- channel softmax / pool

def softmax_channels(x: Tensor) -> Tensor:
    """Per-pixel softmax across the channel axis of a rank-4 tensor.

    The exponential sum accumulates channel-by-channel so that the result is
    bitwise identical to the scalar-loop oracle in float64.
    """
    if x.ndim != 4:
        raise ShapeError(f"softmax_channels: rank-4 tensor required, got {x.dims}")
    c = x.dims[1]
    if c < 1:
        raise ShapeError("softmax_channels: channel extent must be >= 1")
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    denom = e[:, 0:1].copy()
    for i in range(1, c):
        denom += e[:, i:i + 1]
    out = e / denom

    def backward(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner),)

    return _op(out, (x,), backward)


def global_max_pool_argmax(x: Tensor | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Global spatial max per (batch, channel): scores (B,C) and positions (B,C,2).

    Positions are (x, y) feature-map indices; ties resolve to the smallest
    row-major flat index. This is a pure lookup: gradients through the scores
    are handled by the callers that consume them (see gcfc.collect_keys).
    """
    data = x.data if isinstance(x, Tensor) else x
    if data.ndim != 4:
        raise ShapeError(f"global_max_pool_argmax: rank-4 tensor required, got {data.shape}")
    b, c, h, w = data.shape
    if h < 1 or w < 1:
        raise ShapeError("global_max_pool_argmax: spatial extents must be >= 1")
    flat = data.reshape(b, c, h * w)
    idx = flat.argmax(axis=2)
    scores = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0].copy()
    ys, xs = np.divmod(idx, w)
    positions = np.stack([xs, ys], axis=-1).astype(np.int64)
    return scores, positions


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t is not None]


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
