"""Encoder-only transformer for context-token refinement.

Pre-norm residual blocks without positional encodings or dropout: the token
set mixes spatial tokens (whose order encodes position implicitly downstream)
and key-feature tokens, and the refinement is order-equivariant by design.
Defaults are the smallest faithful encoder: one block, four heads, GELU FFN
with a 4x hidden width, scaled dot-product attention with 1/sqrt(d_h).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrix import (concat_cols, gelu, layer_norm, linear, matmul, row_softmax, slice_cols,
                     transpose2d)
from .tensor import ShapeError, Tensor, add, scale, uniform, zeros, full


@dataclass
class EncoderBlockParams:
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    @property
    def width(self) -> int:
        return self.w_q.dims[0]

    def parameters(self) -> list[Tensor]:
        return [self.w_q, self.b_q, self.w_k, self.b_k, self.w_v, self.b_v, self.w_o, self.b_o,
                self.ln1_gamma, self.ln1_beta, self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2,
                self.ln2_gamma, self.ln2_beta]


@dataclass
class EncoderParams:
    heads: int
    blocks: list[EncoderBlockParams]
    eps: float = 1e-5

    def __post_init__(self):
        if not self.blocks:
            raise ShapeError("EncoderParams: at least one block required")
        c = self.blocks[0].width
        if self.heads < 1 or c % self.heads != 0:
            raise ShapeError(f"EncoderParams: heads ({self.heads}) must divide width ({c})")

    @property
    def width(self) -> int:
        return self.blocks[0].width

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for b in self.blocks:
            out += b.parameters()
        return out

    @classmethod
    def initialized(cls, rng: np.random.Generator, width: int, heads: int = 4,
                    n_blocks: int = 1, ffn_mult: int = 4, dtype="f32",
                    zero_bias: bool = False) -> "EncoderParams":
        def lin(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            w = uniform(rng, (fan_in, fan_out), bound, dtype, requires_grad=True)
            if zero_bias:
                b = zeros((fan_out,), dtype, requires_grad=True)
            else:
                b = uniform(rng, (fan_out,), bound, dtype, requires_grad=True)
            return w, b

        hidden = ffn_mult * width
        blocks = []
        for _ in range(n_blocks):
            w_q, b_q = lin(width, width)
            w_k, b_k = lin(width, width)
            w_v, b_v = lin(width, width)
            w_o, b_o = lin(width, width)
            ffn_w1, ffn_b1 = lin(width, hidden)
            ffn_w2, ffn_b2 = lin(hidden, width)
            blocks.append(EncoderBlockParams(
                w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o,
                full((width,), 1.0, dtype, requires_grad=True),
                zeros((width,), dtype, requires_grad=True),
                ffn_w1, ffn_b1, ffn_w2, ffn_b2,
                full((width,), 1.0, dtype, requires_grad=True),
                zeros((width,), dtype, requires_grad=True),
            ))
        return cls(heads, blocks)

    @classmethod
    def zeroed(cls, width: int, heads: int = 4, n_blocks: int = 1, ffn_mult: int = 4,
               dtype="f32") -> "EncoderParams":
        hidden = ffn_mult * width
        blocks = []
        for _ in range(n_blocks):
            z = lambda *dims: zeros(dims, dtype, requires_grad=True)
            blocks.append(EncoderBlockParams(
                z(width, width), z(width), z(width, width), z(width),
                z(width, width), z(width), z(width, width), z(width),
                z(width), z(width),
                z(width, hidden), z(hidden), z(hidden, width), z(width),
                z(width), z(width),
            ))
        return cls(heads, blocks)


def multi_head_attention(x: Tensor, block: EncoderBlockParams, heads: int,
                         return_weights: bool = False):
    """Scaled dot-product self-attention over token rows.

    Heads are contiguous column slices of the q/k/v projections, merged back
    in head order through the output projection.
    """
    if x.ndim != 2:
        raise ShapeError(f"multi_head_attention: rank-2 tokens required, got {x.dims}")
    c = block.width
    if x.dims[1] != c:
        raise ShapeError(f"multi_head_attention: token width {x.dims[1]} != params width {c}")
    if c % heads != 0:
        raise ShapeError(f"multi_head_attention: heads ({heads}) must divide width ({c})")
    dh = c // heads
    q = linear(x, block.w_q, block.b_q)
    k = linear(x, block.w_k, block.b_k)
    v = linear(x, block.w_v, block.b_v)
    inv_scale = 1.0 / np.sqrt(dh)
    ctx_heads = []
    weights = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi)
        attn = row_softmax(scale(matmul(qh, transpose2d(kh)), inv_scale))
        weights.append(attn.data)
        ctx_heads.append(matmul(attn, vh))
    out = linear(concat_cols(ctx_heads), block.w_o, block.b_o)
    return (out, weights) if return_weights else out


def encoder_block(x: Tensor, block: EncoderBlockParams, heads: int, eps: float = 1e-5) -> Tensor:
    """Pre-norm residual block: x + MHA(LN(x)), then + FFN(LN(.))."""
    h = add(x, multi_head_attention(layer_norm(x, block.ln1_gamma, block.ln1_beta, eps),
                                    block, heads))
    ffn_in = layer_norm(h, block.ln2_gamma, block.ln2_beta, eps)
    ffn = linear(gelu(linear(ffn_in, block.ffn_w1, block.ffn_b1)), block.ffn_w2, block.ffn_b2)
    return add(h, ffn)


def encoder_forward(x: Tensor, params: EncoderParams) -> Tensor:
    for block in params.blocks:
        x = encoder_block(x, block, params.heads, params.eps)
    return x
