"""Rank-2 (token-matrix) kernels: matmul, linear, layer norm, row softmax, GELU.

Forward reductions run as explicit loops over the contracted axis with
vectorized slab updates. Per output element that reproduces the operation
sequence of a naive scalar loop exactly, which is what lets the float64
oracle-equivalence suite demand bitwise equality. BLAS matmul is deliberately
not used anywhere: its blocked accumulation order is neither loop-equivalent
nor guaranteed stable across thread counts.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .tensor import ShapeError, Tensor, _check_same_dtype, _op


def matmul_data(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n,k) @ (k,m) with sequential accumulation over k."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: rank-2 operands required, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree: {a.shape} vs {b.shape}")
    n, k = a.shape
    m = b.shape[1]
    acc = np.zeros((n, m), dtype=a.dtype)
    for t in range(k):
        acc += a[:, t, None] * b[None, t, :]
    return acc


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out = matmul_data(a.data, b.data)

    def backward(g):
        return matmul_data(g, b.data.T), matmul_data(a.data.T, g)

    return _op(out, (a, b), backward)


def transpose2d(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose2d: rank-2 tensor required, got {a.dims}")
    out = np.ascontiguousarray(a.data.T)

    def backward(g):
        return (np.ascontiguousarray(g.T),)

    return _op(out, (a,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """tokens (t,c_in) -> (t,c_out) via x @ w + b, with w laid out (c_in, c_out)."""
    _check_same_dtype(x, w, b)
    if w.ndim != 2 or b.ndim != 1 or b.dims[0] != w.dims[1]:
        raise ShapeError(f"linear: weight {w.dims} / bias {b.dims} mismatch")
    out = matmul_data(x.data, w.data) + b.data[None, :]

    def backward(g):
        return matmul_data(g, w.data.T), matmul_data(x.data.T, g), g.sum(axis=0)

    return _op(out, (x, w, b), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each token (row) to zero mean / unit variance, then affine.

    Population variance; ``eps`` is added under the square root.
    """
    _check_same_dtype(x, gamma, beta)
    if eps <= 0:
        raise ShapeError("layer_norm: eps must be > 0")
    if x.ndim != 2:
        raise ShapeError(f"layer_norm: rank-2 tensor required, got {x.dims}")
    c = x.dims[1]
    if gamma.dims != (c,) or beta.dims != (c,):
        raise ShapeError(f"layer_norm: affine dims {gamma.dims}/{beta.dims} do not match width {c}")
    dt = x.data.dtype
    eps = dt.type(eps)
    acc = x.data[:, 0].copy()
    for i in range(1, c):
        acc += x.data[:, i]
    mean = acc / dt.type(c)
    centered = x.data - mean[:, None]
    sq = centered * centered
    vacc = sq[:, 0].copy()
    for i in range(1, c):
        vacc += sq[:, i]
    var = vacc / dt.type(c)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv[:, None]
    out = xhat * gamma.data[None, :] + beta.data[None, :]

    def backward(g):
        gx_hat = g * gamma.data[None, :]
        mean_g = gx_hat.mean(axis=1, keepdims=True)
        mean_gx = (gx_hat * xhat).mean(axis=1, keepdims=True)
        gx = inv[:, None] * (gx_hat - mean_g - xhat * mean_gx)
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _op(out, (x, gamma, beta), backward)


def row_softmax(x: Tensor) -> Tensor:
    """Softmax along each row of a rank-2 tensor (attention weights)."""
    if x.ndim != 2:
        raise ShapeError(f"row_softmax: rank-2 tensor required, got {x.dims}")
    n = x.dims[1]
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    denom = e[:, 0:1].copy()
    for i in range(1, n):
        denom += e[:, i:i + 1]
    out = e / denom

    def backward(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner),)

    return _op(out, (x,), backward)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    dt = x.data.dtype
    phi_cdf = 0.5 * (1.0 + erf(x.data * dt.type(_INV_SQRT2)))
    out = (x.data * phi_cdf).astype(dt, copy=False)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * dt.type(_INV_SQRT_2PI)
        return (g * (phi_cdf + x.data * pdf),)

    return _op(out, (x,), backward)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"slice_cols: rank-2 tensor required, got {x.dims}")
    if not (0 <= lo < hi <= x.dims[1]):
        raise ShapeError(f"slice_cols: [{lo}:{hi}] out of range for width {x.dims[1]}")
    out = np.ascontiguousarray(x.data[:, lo:hi])

    def backward(g):
        full_g = np.zeros_like(x.data)
        full_g[:, lo:hi] = g
        return (full_g,)

    return _op(out, (x,), backward)


def concat_cols(xs: list[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_cols: empty input list")
    _check_same_dtype(*xs)
    rows = xs[0].dims[0]
    for x in xs:
        if x.ndim != 2 or x.dims[0] != rows:
            raise ShapeError("concat_cols: row counts differ")
    out = np.concatenate([x.data for x in xs], axis=1)
    splits = np.cumsum([x.dims[1] for x in xs])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=1))

    return _op(out, tuple(xs), backward)
