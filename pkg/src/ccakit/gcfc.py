"""Global context feature collection.

A 1x1 convolution predicts n importance-score maps from the input; each map's
global argmax names a key location. The channel vector gathered there is
scaled by the sigmoid of the raw max score. Positions are integer lookups and
carry no gradient; gradients flow into the gathered feature values and, via
the gate, into the score map at exactly the argmax element (subgradient of the
max). Key sets are computed independently per batch element and are stored
batch-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import ConvSpec, conv2d
from .tensor import ShapeError, Tensor, _op, global_max_pool_argmax, sigmoid_data


@dataclass
class GcfcParams:
    score: ConvSpec  # 1x1, C -> n

    def __post_init__(self):
        if self.score.kernel != (1, 1) or self.score.stride != 1 or self.score.padding != 0:
            raise ShapeError("GcfcParams: score conv must be a plain 1x1 convolution")

    @property
    def n_keys(self) -> int:
        return self.score.out_channels

    @property
    def in_channels(self) -> int:
        return self.score.in_channels

    def parameters(self):
        return self.score.parameters()

    @classmethod
    def initialized(cls, rng: np.random.Generator, channels: int, n_keys: int = 4,
                    dtype="f32", zero_bias: bool = False) -> "GcfcParams":
        if n_keys < 1:
            raise ShapeError("GcfcParams: n_keys must be positive")
        return cls(ConvSpec.initialized(rng, channels, n_keys, 1, dtype=dtype, zero_bias=zero_bias))


@dataclass
class KeyFeatureSet:
    """n key locations per batch element with raw scores and gated features.

    positions: (B, n, 2) int64 (x, y); raw_scores: (B, n); features: Tensor
    (B, n, C) equal to f1 gathered at each position times sigmoid(raw score).
    """

    positions: np.ndarray
    raw_scores: np.ndarray
    features: Tensor

    @property
    def n_keys(self) -> int:
        return self.positions.shape[1]


def score_maps(f1: Tensor, params: GcfcParams) -> Tensor:
    """n single-channel importance maps with f1's spatial extent."""
    return conv2d(f1, params.score)


def collect_keys(f1: Tensor, s: Tensor) -> KeyFeatureSet:
    """Gather and sigmoid-gate f1 at each score map's global argmax."""
    if f1.ndim != 4 or s.ndim != 4:
        raise ShapeError("collect_keys: rank-4 tensors required")
    if f1.dims[0] != s.dims[0] or f1.dims[2:] != s.dims[2:]:
        raise ShapeError(f"collect_keys: spatial/batch dims differ: {f1.dims} vs {s.dims}")
    b, c = f1.dims[0], f1.dims[1]
    n = s.dims[1]
    scores, positions = global_max_pool_argmax(s)
    gates = sigmoid_data(scores)
    raw = np.empty((b, n, c), dtype=f1.data.dtype)
    for bi in range(b):
        for ni in range(n):
            px, py = positions[bi, ni]
            raw[bi, ni] = f1.data[bi, :, py, px]
    gated = raw * gates[..., None]

    def backward(g):
        gf1 = np.zeros_like(f1.data)
        gs = np.zeros_like(s.data)
        dgate = gates * (1.0 - gates)
        for bi in range(b):
            for ni in range(n):
                px, py = positions[bi, ni]
                gf1[bi, :, py, px] += g[bi, ni] * gates[bi, ni]
                gs[bi, ni, py, px] += float(np.dot(g[bi, ni], raw[bi, ni])) * dgate[bi, ni]
        return gf1, gs

    features = _op(gated, (f1, s), backward)
    return KeyFeatureSet(positions, scores, features)


def gcfc_forward(f1: Tensor, params: GcfcParams) -> KeyFeatureSet:
    if f1.dims[1] != params.in_channels:
        raise ShapeError(f"gcfc_forward: input has {f1.dims[1]} channels, "
                         f"score conv expects {params.in_channels}")
    return collect_keys(f1, score_maps(f1, params))
