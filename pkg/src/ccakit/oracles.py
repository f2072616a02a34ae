"""Naive loop oracles for every forward kernel.

Each function is a deliberately dumb scalar-loop re-statement of a kernel's
definition, kept free of the vectorized code paths it checks. Accumulations
run left-to-right in the same index order the production kernels use, so in
float64 the comparison is exact equality, not a tolerance.
"""

from __future__ import annotations

import numpy as np

from .conv import ConvSpec


def conv2d_oracle(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    b, c, h, w = x.shape
    kh, kw = spec.kernel
    s, d, p = spec.stride, spec.dilation, spec.padding
    oh, ow = spec.out_shape(h, w)
    wt = spec.weight.data
    bias = spec.bias.data
    dt = x.dtype.type
    out = np.empty((b, spec.out_channels, oh, ow), dtype=x.dtype)
    for n in range(b):
        for oc in range(spec.out_channels):
            for i in range(oh):
                for j in range(ow):
                    acc = dt(0)
                    for ic in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                yy = i * s + ki * d - p
                                xx = j * s + kj * d - p
                                if 0 <= yy < h and 0 <= xx < w:
                                    acc = acc + x[n, ic, yy, xx] * wt[oc, ic, ki, kj]
                    out[n, oc, i, j] = acc + bias[oc]
    return out


def sigmoid_oracle(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    flat_in = x.reshape(-1)
    flat_out = out.reshape(-1)
    with np.errstate(over="ignore"):
        for i in range(flat_in.size):
            flat_out[i] = 1.0 / (1.0 + np.exp(-flat_in[i]))
    return out


def softmax_channels_oracle(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    out = np.empty_like(x)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                m = x[n, 0, i, j]
                for k in range(1, c):
                    if x[n, k, i, j] > m:
                        m = x[n, k, i, j]
                e = np.empty(c, dtype=x.dtype)
                for k in range(c):
                    e[k] = np.exp(x[n, k, i, j] - m)
                denom = e[0]
                for k in range(1, c):
                    denom = denom + e[k]
                for k in range(c):
                    out[n, k, i, j] = e[k] / denom
    return out


def global_max_pool_argmax_oracle(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b, c, h, w = x.shape
    scores = np.empty((b, c), dtype=x.dtype)
    positions = np.empty((b, c, 2), dtype=np.int64)
    for n in range(b):
        for k in range(c):
            best = x[n, k, 0, 0]
            by = bx = 0
            for i in range(h):
                for j in range(w):
                    if x[n, k, i, j] > best:  # strict: first max wins ties
                        best = x[n, k, i, j]
                        by, bx = i, j
            scores[n, k] = best
            positions[n, k] = (bx, by)
    return scores, positions


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    m = b.shape[1]
    dt = a.dtype.type
    out = np.empty((n, m), dtype=a.dtype)
    for i in range(n):
        for j in range(m):
            acc = dt(0)
            for t in range(k):
                acc = acc + a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def linear_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = matmul_oracle(x, w)
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = out[i, j] + b[j]
    return out


def layer_norm_oracle(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      eps: float = 1e-5) -> np.ndarray:
    t, c = x.shape
    dt = x.dtype.type
    eps = dt(eps)
    out = np.empty_like(x)
    for i in range(t):
        acc = x[i, 0]
        for j in range(1, c):
            acc = acc + x[i, j]
        mean = acc / dt(c)
        vacc = (x[i, 0] - mean) * (x[i, 0] - mean)
        for j in range(1, c):
            d = x[i, j] - mean
            vacc = vacc + d * d
        var = vacc / dt(c)
        inv = 1.0 / np.sqrt(var + eps)
        for j in range(c):
            out[i, j] = ((x[i, j] - mean) * inv) * gamma[j] + beta[j]
    return out


def multi_head_attention_oracle(x: np.ndarray, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o,
                                heads: int) -> np.ndarray:
    t, c = x.shape
    dh = c // heads
    q = linear_oracle(x, w_q, b_q)
    k = linear_oracle(x, w_k, b_k)
    v = linear_oracle(x, w_v, b_v)
    inv_scale = x.dtype.type(1.0 / np.sqrt(dh))
    ctx = np.empty((t, c), dtype=x.dtype)
    for h in range(heads):
        lo = h * dh
        for i in range(t):
            logits = np.empty(t, dtype=x.dtype)
            for j in range(t):
                acc = x.dtype.type(0)
                for d in range(dh):
                    acc = acc + q[i, lo + d] * k[j, lo + d]
                logits[j] = acc * inv_scale
            m = logits[0]
            for j in range(1, t):
                if logits[j] > m:
                    m = logits[j]
            e = np.empty(t, dtype=x.dtype)
            for j in range(t):
                e[j] = np.exp(logits[j] - m)
            denom = e[0]
            for j in range(1, t):
                denom = denom + e[j]
            attn = e / denom
            for d in range(dh):
                acc = x.dtype.type(0)
                for j in range(t):
                    acc = acc + attn[j] * v[j, lo + d]
                ctx[i, lo + d] = acc
    return linear_oracle(ctx, w_o, b_o)


def collect_keys_oracle(f1: np.ndarray, s: np.ndarray):
    """Scan-and-gather reference for GCFC key collection."""
    scores, positions = global_max_pool_argmax_oracle(s)
    b, n = scores.shape
    c = f1.shape[1]
    feats = np.empty((b, n, c), dtype=f1.dtype)
    with np.errstate(over="ignore"):
        for bi in range(b):
            for ni in range(n):
                px, py = positions[bi, ni]
                gate = 1.0 / (1.0 + np.exp(-scores[bi, ni]))
                for ci in range(c):
                    feats[bi, ni, ci] = f1[bi, ci, py, px] * gate
    return scores, positions, feats
