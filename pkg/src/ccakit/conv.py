"""2-D convolution with dilation: spec type, im2col fast path, analytic backward.

The fast path is im2col plus the package's sequential-reduction matmul, so for
every output element the taps accumulate in (in_channel, kernel_row,
kernel_col) order — the same order as the seven-nested-loop oracle in
``ccakit.oracles``, which makes the two paths bitwise identical in both
numeric modes. Zero-padding contributes ``+0.0`` terms only, which cannot
perturb the accumulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrix import matmul_data
from .tensor import ShapeError, Tensor, _op, resolve_dtype, uniform, zeros


def conv_out_extent(extent: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    out = (extent + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1
    if out < 1:
        raise ShapeError(
            f"convolution output extent {out} < 1 "
            f"(input {extent}, kernel {kernel}, stride {stride}, pad {padding}, dilation {dilation})"
        )
    return out


@dataclass
class ConvSpec:
    """Convolution geometry plus its weight (out,in,kh,kw) and bias (out,) tensors."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int
    padding: int
    dilation: int
    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        kh, kw = self.kernel
        if min(self.in_channels, self.out_channels, kh, kw, self.stride, self.dilation) < 1:
            raise ShapeError("ConvSpec: channel/kernel/stride/dilation extents must be positive")
        if self.padding < 0:
            raise ShapeError("ConvSpec: padding must be non-negative")
        if self.weight.dims != (self.out_channels, self.in_channels, kh, kw):
            raise ShapeError(f"ConvSpec: weight dims {self.weight.dims} do not match spec")
        if self.bias.dims != (self.out_channels,):
            raise ShapeError(f"ConvSpec: bias dims {self.bias.dims} do not match out_channels")

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        return (
            conv_out_extent(h, kh, self.stride, self.padding, self.dilation),
            conv_out_extent(w, kw, self.stride, self.padding, self.dilation),
        )

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    @classmethod
    def initialized(cls, rng: np.random.Generator, in_channels: int, out_channels: int,
                    kernel: int | tuple[int, int] = 3, stride: int = 1, padding: int = 0,
                    dilation: int = 1, dtype="f32", zero_bias: bool = False,
                    requires_grad: bool = True) -> "ConvSpec":
        """Seeded uniform init in +-1/sqrt(fan_in); weight drawn before bias."""
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        bound = 1.0 / np.sqrt(in_channels * kh * kw)
        weight = uniform(rng, (out_channels, in_channels, kh, kw), bound, dtype, requires_grad)
        if zero_bias:
            bias = zeros((out_channels,), dtype, requires_grad)
        else:
            bias = uniform(rng, (out_channels,), bound, dtype, requires_grad)
        return cls(in_channels, out_channels, (kh, kw), stride, padding, dilation, weight, bias)

    @classmethod
    def zeroed(cls, in_channels: int, out_channels: int, kernel: int | tuple[int, int] = 3,
               stride: int = 1, padding: int = 0, dilation: int = 1, dtype="f32",
               requires_grad: bool = True) -> "ConvSpec":
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        weight = zeros((out_channels, in_channels, kh, kw), dtype, requires_grad)
        bias = zeros((out_channels,), dtype, requires_grad)
        return cls(in_channels, out_channels, (kh, kw), stride, padding, dilation, weight, bias)


def _im2col(x: np.ndarray, spec: ConvSpec, oh: int, ow: int) -> np.ndarray:
    """Gather receptive-field columns: (B*OH*OW, IC*KH*KW), taps in (c,i,j) order."""
    b, c, _, _ = x.shape
    kh, kw = spec.kernel
    s, d, p = spec.stride, spec.dilation, spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i * d: i * d + (oh - 1) * s + 1: s,
                                  j * d: j * d + (ow - 1) * s + 1: s]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * kh * kw)


def _col2im(gcols: np.ndarray, x_shape: tuple[int, ...], spec: ConvSpec,
            oh: int, ow: int) -> np.ndarray:
    """Scatter-add column gradients back to the (padded, then cropped) input."""
    b, c, h, w = x_shape
    kh, kw = spec.kernel
    s, d, p = spec.stride, spec.dilation, spec.padding
    g6 = gcols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    gx = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i * d: i * d + (oh - 1) * s + 1: s,
               j * d: j * d + (ow - 1) * s + 1: s] += g6[:, :, i, j]
    return gx[:, :, p: p + h, p: p + w] if p else gx


def _check_conv_input(x_shape: tuple[int, ...], spec: ConvSpec) -> tuple[int, int]:
    if len(x_shape) != 4:
        raise ShapeError(f"conv2d: rank-4 input required, got {x_shape}")
    if x_shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d: input has {x_shape[1]} channels, spec expects {spec.in_channels}")
    return spec.out_shape(x_shape[2], x_shape[3])


def conv2d_data(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    oh, ow = _check_conv_input(x.shape, spec)
    b = x.shape[0]
    oc = spec.out_channels
    w2d = spec.weight.data.reshape(oc, -1)
    out2d = matmul_data(_im2col(x, spec, oh, ow), w2d.T)
    out = out2d.reshape(b, oh, ow, oc).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out) + spec.bias.data[None, :, None, None]


def conv2d_backward_data(x: np.ndarray, spec: ConvSpec,
                         upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    oh, ow = _check_conv_input(x.shape, spec)
    b = x.shape[0]
    oc = spec.out_channels
    if upstream.shape != (b, oc, oh, ow):
        raise ShapeError(f"conv2d_backward: upstream dims {upstream.shape} != {(b, oc, oh, ow)}")
    g2d = upstream.transpose(0, 2, 3, 1).reshape(b * oh * ow, oc)
    cols = _im2col(x, spec, oh, ow)
    grad_b = upstream.sum(axis=(0, 2, 3))
    grad_w = matmul_data(g2d.T, cols).reshape(spec.weight.dims)
    grad_x = _col2im(matmul_data(g2d, spec.weight.data.reshape(oc, -1)), x.shape, spec, oh, ow)
    return grad_x, grad_w, grad_b


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """Dilated 2-D convolution with bias, differentiable w.r.t. input and weights."""
    if x.data.dtype != spec.weight.data.dtype:
        raise ShapeError(f"conv2d: input dtype {x.dtype} != weight dtype {spec.weight.dtype}")
    out = conv2d_data(x.data, spec)

    def backward(g):
        return conv2d_backward_data(x.data, spec, g)

    return _op(out, (x, spec.weight, spec.bias), backward)


def conv2d_backward(x: Tensor | np.ndarray, spec: ConvSpec,
                    upstream: Tensor | np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic (grad_x, grad_w, grad_b) for a given upstream gradient."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=resolve_dtype("f64"))
    gd = upstream.data if isinstance(upstream, Tensor) else np.asarray(upstream, dtype=xd.dtype)
    return conv2d_backward_data(xd, spec, gd)
