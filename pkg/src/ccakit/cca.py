"""Full context-collection block: reduction convs, LCFE + GCFC, transformer
refinement, re-spatialization, fusion — plus parameter/FLOP accounting.

Dataflow for one forward pass::

    f --conv1(3x3, stride s)--> f1 --LCFE--> f_lc --+
                                 `--GCFC--> keys ---+--> tokens --encoder--> f_t
    f --conv2(3x3, stride s)--> f2 ------------------------------------+
    reassemble(f_t) ++ f2  --concat channels--> conv3(3x3, pad 1) --> F

Tokens are the H'*W' spatial vectors of f_lc in row-major order followed by
the n gated key features; refined key tokens are scattered back onto the map
at their source positions (added by default, overwrite selectable).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conv import ConvSpec, conv2d, conv_out_extent
from .gcfc import GcfcParams, KeyFeatureSet, gcfc_forward
from .lcfe import LcfeParams, lcfe_forward
from .tensor import ShapeError, Tensor, _op, concat_batch, concat_channels
from .transformer import EncoderParams, encoder_forward


@dataclass
class CcaConfig:
    """Architecture hyperparameters; everything the method leaves open."""

    c_in: int = 16
    c_mid: int = 8
    c_out: int = 16
    n_keys: int = 4
    dilations: tuple[int, int, int] = (1, 2, 3)
    stride: int = 2
    heads: int = 4
    blocks: int = 1
    ffn_mult: int = 4
    key_merge: str = "add"

    def __post_init__(self):
        if min(self.c_in, self.c_mid, self.c_out) < 1:
            raise ShapeError("CcaConfig: channel widths must be >= 1")
        if self.stride not in (1, 2):
            raise ShapeError(f"CcaConfig: stride must be 1 or 2, got {self.stride}")
        if self.n_keys < 0:
            raise ShapeError("CcaConfig: n_keys must be >= 0")
        if len(self.dilations) != 3 or any(d < 1 for d in self.dilations):
            raise ShapeError("CcaConfig: exactly three positive dilation rates required")
        if self.heads < 1 or self.c_mid % self.heads != 0:
            raise ShapeError(f"CcaConfig: heads ({self.heads}) must divide c_mid ({self.c_mid})")
        if self.blocks < 1 or self.ffn_mult < 1:
            raise ShapeError("CcaConfig: blocks and ffn_mult must be >= 1")
        if self.key_merge not in ("add", "overwrite"):
            raise ShapeError(f"CcaConfig: key_merge must be 'add' or 'overwrite', got {self.key_merge!r}")

    def out_extents(self, h: int, w: int) -> tuple[int, int]:
        return (conv_out_extent(h, 3, self.stride, 1, 1),
                conv_out_extent(w, 3, self.stride, 1, 1))


@dataclass
class CcaParams:
    conv1: ConvSpec
    conv2: ConvSpec
    conv3: ConvSpec
    lcfe: LcfeParams
    gcfc: GcfcParams | None
    encoder: EncoderParams

    def __post_init__(self):
        c_mid = self.conv1.out_channels
        if self.conv2.out_channels != c_mid:
            raise ShapeError("CcaParams: conv1 and conv2 must share output channels")
        if self.conv3.in_channels != 2 * c_mid:
            raise ShapeError("CcaParams: conv3 must take 2*c_mid input channels")
        if self.lcfe.channels != c_mid or self.encoder.width != c_mid:
            raise ShapeError("CcaParams: LCFE/encoder width must equal c_mid")
        if self.gcfc is not None and self.gcfc.in_channels != c_mid:
            raise ShapeError("CcaParams: GCFC input width must equal c_mid")

    def parameters(self) -> list[Tensor]:
        out = self.conv1.parameters() + self.conv2.parameters()
        out += self.lcfe.parameters()
        if self.gcfc is not None:
            out += self.gcfc.parameters()
        out += self.encoder.parameters()
        out += self.conv3.parameters()
        return out


def init_cca_params(config: CcaConfig, seed: int, dtype="f32", init: str = "uniform",
                    use_bias: bool = True) -> CcaParams:
    """Build all parameter containers from one seed.

    Draw order is fixed (conv1, conv2, LCFE, GCFC, encoder, conv3) so a seed
    pins every value; ``init='zero'`` produces an all-zero parameter set.
    """
    if init not in ("uniform", "zero"):
        raise ShapeError(f"init must be 'uniform' or 'zero', got {init!r}")
    c = config
    if init == "zero":
        conv1 = ConvSpec.zeroed(c.c_in, c.c_mid, 3, stride=c.stride, padding=1, dtype=dtype)
        conv2 = ConvSpec.zeroed(c.c_in, c.c_mid, 3, stride=c.stride, padding=1, dtype=dtype)
        lcfe = LcfeParams.zeroed(c.c_mid, c.dilations, dtype)
        gcfc = GcfcParams(ConvSpec.zeroed(c.c_mid, c.n_keys, 1, dtype=dtype)) if c.n_keys else None
        encoder = EncoderParams.zeroed(c.c_mid, c.heads, c.blocks, c.ffn_mult, dtype)
        conv3 = ConvSpec.zeroed(2 * c.c_mid, c.c_out, 3, padding=1, dtype=dtype)
        return CcaParams(conv1, conv2, conv3, lcfe, gcfc, encoder)
    rng = np.random.default_rng(seed)
    zb = not use_bias
    conv1 = ConvSpec.initialized(rng, c.c_in, c.c_mid, 3, stride=c.stride, padding=1,
                                 dtype=dtype, zero_bias=zb)
    conv2 = ConvSpec.initialized(rng, c.c_in, c.c_mid, 3, stride=c.stride, padding=1,
                                 dtype=dtype, zero_bias=zb)
    lcfe = LcfeParams.initialized(rng, c.c_mid, c.dilations, dtype, zero_bias=zb)
    gcfc = GcfcParams.initialized(rng, c.c_mid, c.n_keys, dtype, zero_bias=zb) if c.n_keys else None
    encoder = EncoderParams.initialized(rng, c.c_mid, c.heads, c.blocks, c.ffn_mult, dtype,
                                        zero_bias=zb)
    conv3 = ConvSpec.initialized(rng, 2 * c.c_mid, c.c_out, 3, padding=1, dtype=dtype, zero_bias=zb)
    return CcaParams(conv1, conv2, conv3, lcfe, gcfc, encoder)


# ----------------------------------------------------------- token (de)assembly

@dataclass
class TokenLayout:
    """Everything needed to invert assemble_tokens for one batch element."""

    height: int
    width: int
    n_keys: int
    positions: np.ndarray  # (n, 2) int64 (x, y)

    @property
    def n_tokens(self) -> int:
        return self.height * self.width + self.n_keys


def assemble_tokens(f_lc: Tensor, keys: KeyFeatureSet | None,
                    batch_index: int = 0) -> tuple[Tensor, TokenLayout]:
    """Flatten one batch element into a (T, C) token matrix.

    Spatial vectors come first in row-major pixel order, the gated key
    features follow. T = H*W + n.
    """
    if f_lc.ndim != 4:
        raise ShapeError(f"assemble_tokens: rank-4 map required, got {f_lc.dims}")
    b, c, h, w = f_lc.dims
    if not 0 <= batch_index < b:
        raise ShapeError(f"assemble_tokens: batch index {batch_index} out of range for {b}")
    if keys is not None and keys.features.dims[2] != c:
        raise ShapeError(f"assemble_tokens: key width {keys.features.dims[2]} != map channels {c}")
    n = keys.n_keys if keys is not None else 0
    local = f_lc.data[batch_index].reshape(c, h * w).T
    if keys is None:
        out = np.ascontiguousarray(local)

        def backward(g):
            gmap = np.zeros_like(f_lc.data)
            gmap[batch_index] = g.T.reshape(c, h, w)
            return (gmap,)

        parents = (f_lc,)
        layout = TokenLayout(h, w, 0, np.zeros((0, 2), dtype=np.int64))
    else:
        out = np.concatenate([local, keys.features.data[batch_index]], axis=0)

        def backward(g):
            gmap = np.zeros_like(f_lc.data)
            gmap[batch_index] = g[:h * w].T.reshape(c, h, w)
            gfeat = np.zeros_like(keys.features.data)
            gfeat[batch_index] = g[h * w:]
            return gmap, gfeat

        parents = (f_lc, keys.features)
        layout = TokenLayout(h, w, n, keys.positions[batch_index].copy())
    return _op(out, parents, backward), layout


def reassemble_spatial(tokens: Tensor, layout: TokenLayout, merge: str = "add") -> Tensor:
    """Invert assemble_tokens onto a (1, C, H, W) map.

    The refined key tokens land back at their recorded positions: added onto
    the local map by default, or overwriting it (last key wins a shared pixel).
    """
    if tokens.ndim != 2:
        raise ShapeError(f"reassemble_spatial: rank-2 tokens required, got {tokens.dims}")
    t, c = tokens.dims
    h, w, n = layout.height, layout.width, layout.n_keys
    if t != layout.n_tokens:
        raise ShapeError(f"reassemble_spatial: {t} tokens but layout expects {layout.n_tokens}")
    if merge not in ("add", "overwrite"):
        raise ShapeError(f"reassemble_spatial: merge must be 'add' or 'overwrite', got {merge!r}")
    base = tokens.data[:h * w].T.reshape(1, c, h, w).copy()
    if merge == "add":
        for i in range(n):
            px, py = layout.positions[i]
            base[0, :, py, px] += tokens.data[h * w + i]

        def backward(g):
            gt = np.empty_like(tokens.data)
            gt[:h * w] = g[0].reshape(c, h * w).T
            for i in range(n):
                px, py = layout.positions[i]
                gt[h * w + i] = g[0, :, py, px]
            return (gt,)
    else:
        writer = np.full((h, w), -1, dtype=np.int64)
        for i in range(n):
            px, py = layout.positions[i]
            base[0, :, py, px] = tokens.data[h * w + i]
            writer[py, px] = i

        def backward(g):
            gt = np.zeros_like(tokens.data)
            masked = np.where((writer < 0)[None, :, :], g[0], 0.0)
            gt[:h * w] = masked.reshape(c, h * w).T
            for i in range(n):
                px, py = layout.positions[i]
                if writer[py, px] == i:
                    gt[h * w + i] = g[0, :, py, px]
            return (gt,)

    return _op(base, (tokens,), backward)


# ------------------------------------------------------------------ full forward

@dataclass
class CcaTrace:
    """Per-stage shape report plus the key locations seen during a forward."""

    stages: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)
    key_positions: np.ndarray | None = None  # (B, n, 2) int64 (x, y)
    key_scores: np.ndarray | None = None     # (B, n)


def cca_forward(f: Tensor, params: CcaParams, config: CcaConfig) -> Tensor:
    out, _ = cca_forward_traced(f, params, config)
    return out


def cca_forward_traced(f: Tensor, params: CcaParams,
                       config: CcaConfig) -> tuple[Tensor, CcaTrace]:
    if f.ndim != 4:
        raise ShapeError(f"cca_forward: rank-4 input required, got {f.dims}")
    if f.dims[1] != config.c_in:
        raise ShapeError(f"cca_forward: input has {f.dims[1]} channels, config expects {config.c_in}")
    trace = CcaTrace()
    trace.stages.append(("input", f.dims))
    f1 = conv2d(f, params.conv1)
    f2 = conv2d(f, params.conv2)
    trace.stages.append(("conv1", f1.dims))
    trace.stages.append(("conv2", f2.dims))
    f_lc = lcfe_forward(f1, params.lcfe)
    trace.stages.append(("lcfe", f_lc.dims))
    keys = gcfc_forward(f1, params.gcfc) if params.gcfc is not None else None
    if keys is not None:
        trace.stages.append(("gcfc", keys.features.dims))
        trace.key_positions = keys.positions.copy()
        trace.key_scores = keys.raw_scores.copy()
    maps = []
    token_dims: tuple[int, ...] = ()
    for b in range(f.dims[0]):
        tokens, layout = assemble_tokens(f_lc, keys, batch_index=b)
        token_dims = tokens.dims
        refined = encoder_forward(tokens, params.encoder)
        maps.append(reassemble_spatial(refined, layout, config.key_merge))
    trace.stages.append(("tokens", (f.dims[0],) + token_dims))
    f_t = concat_batch(maps)
    trace.stages.append(("reassembled", f_t.dims))
    fused = concat_channels([f_t, f2])
    trace.stages.append(("concat", fused.dims))
    out = conv2d(fused, params.conv3)
    trace.stages.append(("output", out.dims))
    return out, trace


# -------------------------------------------------------------------- accounting

def _conv_params(in_c: int, out_c: int, k: int) -> int:
    return in_c * out_c * k * k + out_c


def param_count(config: CcaConfig) -> dict[str, int]:
    """Closed-form parameter counts per stage (weights + biases)."""
    c = config
    hidden = c.ffn_mult * c.c_mid
    per_block = (4 * (c.c_mid * c.c_mid + c.c_mid)
                 + (c.c_mid * hidden + hidden) + (hidden * c.c_mid + c.c_mid)
                 + 2 * (2 * c.c_mid))
    counts = {
        "conv1": _conv_params(c.c_in, c.c_mid, 3),
        "conv2": _conv_params(c.c_in, c.c_mid, 3),
        "lcfe": 3 * _conv_params(c.c_mid, c.c_mid, 3) + _conv_params(3 * c.c_mid, 3, 1)
                + _conv_params(3, 3, 3),
        "gcfc": _conv_params(c.c_mid, c.n_keys, 1) if c.n_keys else 0,
        "transformer": c.blocks * per_block,
        "conv3": _conv_params(2 * c.c_mid, c.c_out, 3),
    }
    counts["total"] = sum(counts.values())
    return counts


def count_parameters(params: CcaParams) -> int:
    """Independent oracle: walk the actual containers and sum array sizes."""
    return sum(p.size for p in params.parameters())


def flop_count(config: CcaConfig, input_dims: tuple[int, int, int, int]) -> dict[str, int]:
    """Per-stage FLOPs for one forward pass: 2 x multiply-accumulates.

    Counts convolution and matrix products only (attention includes the QK^T
    and AV products); bias adds, softmax, norms and other elementwise work are
    excluded by convention.
    """
    b, c_in, h, w = input_dims
    if c_in != config.c_in:
        raise ShapeError(f"flop_count: input channels {c_in} != config c_in {config.c_in}")
    h1, w1 = config.out_extents(h, w)
    c = config
    px = h1 * w1

    def conv_flops(in_c, out_c, k, out_px):
        return 2 * b * out_px * out_c * in_c * k * k

    t = px + c.n_keys
    hidden = c.ffn_mult * c.c_mid
    per_block = (2 * 4 * t * c.c_mid * c.c_mid     # q, k, v, output projections
                 + 2 * 2 * t * t * c.c_mid         # QK^T and AV across all heads
                 + 2 * 2 * t * c.c_mid * hidden)   # FFN in / out
    counts = {
        "conv1": conv_flops(c.c_in, c.c_mid, 3, px),
        "conv2": conv_flops(c.c_in, c.c_mid, 3, px),
        "lcfe": (3 * conv_flops(c.c_mid, c.c_mid, 3, px)
                 + conv_flops(3 * c.c_mid, 3, 1, px) + conv_flops(3, 3, 3, px)),
        "gcfc": conv_flops(c.c_mid, c.n_keys, 1, px) if c.n_keys else 0,
        "transformer": b * c.blocks * per_block,
        "conv3": conv_flops(2 * c.c_mid, c.c_out, 3, px),
    }
    counts["total"] = sum(counts.values())
    return counts
