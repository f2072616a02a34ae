"""Local context feature enhancement.

Three parallel 3x3 dilated convolutions (rates 1, 2, 3 by default) over the
same input, fused per pixel by learned softmax weights. Each branch pads by
its dilation rate so all branch maps keep the input's spatial extent, which
the weighted sum requires. The fusion weights come from a small head:
concat(F1,F2,F3) -> 1x1 reduce to 3 channels -> 3x3 mix -> channel softmax ->
split into three one-channel maps. The weights form a per-pixel convex
combination, broadcast across channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import ConvSpec, conv2d
from .tensor import ShapeError, Tensor, add, concat_channels, mul, softmax_channels, split_channels


@dataclass
class LcfeParams:
    branches: tuple[ConvSpec, ConvSpec, ConvSpec]
    reduce: ConvSpec  # 1x1, 3C -> 3
    mix: ConvSpec     # 3x3, 3 -> 3, padding 1

    def __post_init__(self):
        first = self.branches[0]
        for b in self.branches:
            if (b.in_channels, b.out_channels) != (first.in_channels, first.out_channels):
                raise ShapeError("LcfeParams: branches must share in/out channels")
            if b.padding != b.dilation or b.stride != 1:
                raise ShapeError("LcfeParams: branches need stride 1 and padding == dilation")
        if self.reduce.in_channels != 3 * first.out_channels or self.reduce.out_channels != 3:
            raise ShapeError("LcfeParams: reduce conv must map 3C -> 3 channels")
        if self.mix.in_channels != 3 or self.mix.out_channels != 3:
            raise ShapeError("LcfeParams: mix conv must map 3 -> 3 channels")

    @property
    def channels(self) -> int:
        return self.branches[0].in_channels

    @property
    def dilations(self) -> tuple[int, int, int]:
        return tuple(b.dilation for b in self.branches)

    def parameters(self) -> list[Tensor]:
        out = []
        for b in self.branches:
            out += b.parameters()
        return out + self.reduce.parameters() + self.mix.parameters()

    @classmethod
    def initialized(cls, rng: np.random.Generator, channels: int,
                    dilations: tuple[int, int, int] = (1, 2, 3), dtype="f32",
                    zero_bias: bool = False) -> "LcfeParams":
        branches = tuple(
            ConvSpec.initialized(rng, channels, channels, 3, stride=1, padding=r, dilation=r,
                                 dtype=dtype, zero_bias=zero_bias)
            for r in dilations
        )
        reduce = ConvSpec.initialized(rng, 3 * channels, 3, 1, dtype=dtype, zero_bias=zero_bias)
        mix = ConvSpec.initialized(rng, 3, 3, 3, padding=1, dtype=dtype, zero_bias=zero_bias)
        return cls(branches, reduce, mix)

    @classmethod
    def zeroed(cls, channels: int, dilations: tuple[int, int, int] = (1, 2, 3),
               dtype="f32") -> "LcfeParams":
        branches = tuple(
            ConvSpec.zeroed(channels, channels, 3, stride=1, padding=r, dilation=r, dtype=dtype)
            for r in dilations
        )
        reduce = ConvSpec.zeroed(3 * channels, 3, 1, dtype=dtype)
        mix = ConvSpec.zeroed(3, 3, 3, padding=1, dtype=dtype)
        return cls(branches, reduce, mix)


def branch_maps(f1: Tensor, params: LcfeParams) -> tuple[Tensor, Tensor, Tensor]:
    """The three dilated-convolution responses F1, F2, F3 (shape-preserving)."""
    return tuple(conv2d(f1, spec) for spec in params.branches)


def fusion_weights(f_a: Tensor, f_b: Tensor, f_c: Tensor,
                   params: LcfeParams) -> tuple[Tensor, Tensor, Tensor]:
    """Per-pixel softmax weights (w1, w2, w3), each a single-channel map summing to 1."""
    if not (f_a.dims == f_b.dims == f_c.dims):
        raise ShapeError(f"fusion_weights: branch dims differ: {f_a.dims}, {f_b.dims}, {f_c.dims}")
    stacked = concat_channels([f_a, f_b, f_c])
    logits = conv2d(conv2d(stacked, params.reduce), params.mix)
    w1, w2, w3 = split_channels(softmax_channels(logits), 3)
    return w1, w2, w3


def lcfe_forward(f1: Tensor, params: LcfeParams) -> Tensor:
    """Weight-gated sum of the branch maps: w1*F1 + w2*F2 + w3*F3."""
    f_a, f_b, f_c = branch_maps(f1, params)
    w1, w2, w3 = fusion_weights(f_a, f_b, f_c, params)
    return add(add(mul(w1, f_a), mul(w2, f_b)), mul(w3, f_c))
