"""Network ops on NCHW tensors: convolutions, pooling, linear, upsampling.

Convolution is cross-correlation (no kernel flip). Weights are laid out
``(out, in, k, k)`` for :func:`conv2d` and ``(in, out, k, k)`` for
:func:`transposed_conv2d`, so the same array serves both directions of the
adjoint pair.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import DimensionError, Tensor, _make, _wrap

__all__ = [
    "conv2d",
    "transposed_conv2d",
    "global_avg_pool",
    "linear",
    "upsample_nearest",
    "avg_pool2d",
    "conv2d_input_grad",
]


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _unpad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]


def _conv_out(size: int, k: int, stride: int, pad: int, axis: str) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise DimensionError(
            f"conv2d: {axis}={size} with k={k}, stride={stride}, pad={pad} gives a non-integral output extent"
        )
    return span // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    x, weight = _wrap(x), _wrap(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, wc, k, k2 = weight.shape
    if wc != c:
        raise DimensionError(f"conv2d: input channels (axis 1) {c} != weight in-channels (axis 1) {wc}")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if pad < 0 or stride < 1:
        raise DimensionError(f"conv2d: invalid stride={stride} / pad={pad}")
    ho = _conv_out(h, k, stride, pad, "H")
    wo = _conv_out(w, k, stride, pad, "W")
    cols = kernels.im2col(_pad(x.data, pad), k, stride)  # (N, CKK, L)
    wmat = weight.data.reshape(o, c * k * k)
    out = np.matmul(wmat, cols).reshape(n, o, ho, wo)
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (o,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({o},)")
        out = out + bias.data.reshape(1, o, 1, 1)
        parents.append(bias)

    def backward(g):
        gm = g.reshape(n, o, ho * wo)
        if weight.requires_grad:
            weight._accumulate(np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gm)
            x._accumulate(_unpad(kernels.col2im(gcols, c, h + 2 * pad, w + 2 * pad, k, stride), pad))

    return _make(out, parents, backward)


def conv2d_input_grad(g: np.ndarray, weight: np.ndarray, in_hw: tuple[int, int], stride: int, pad: int) -> np.ndarray:
    """Gradient of conv2d w.r.t. its input: the linear map transposed conv realizes."""
    n, o, ho, wo = g.shape
    _, c, k, _ = weight.shape
    h, w = in_hw
    gcols = np.matmul(weight.reshape(o, c * k * k).T, g.reshape(n, o, ho * wo))
    return _unpad(kernels.col2im(gcols, c, h + 2 * pad, w + 2 * pad, k, stride), pad)


def transposed_conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Fractionally strided convolution; output extent ``(H-1)*stride - 2*pad + k``."""
    x, weight = _wrap(x), _wrap(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"transposed_conv2d: expected 4-D tensors, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    wc, o, k, k2 = weight.shape
    if wc != c:
        raise DimensionError(f"transposed_conv2d: input channels (axis 1) {c} != weight axis 0 {wc}")
    if k != k2:
        raise DimensionError(f"transposed_conv2d: kernel must be square, got {k}x{k2}")
    hp = (h - 1) * stride + k
    wp = (w - 1) * stride + k
    if hp - 2 * pad < 1 or wp - 2 * pad < 1 or pad < 0:
        raise DimensionError(f"transposed_conv2d: pad={pad} leaves no output for input {h}x{w}")
    wmat = weight.data.reshape(c, o * k * k)
    xm = x.data.reshape(n, c, h * w)
    out = _unpad(kernels.col2im(np.matmul(wmat.T, xm), o, hp, wp, k, stride), pad)
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (o,):
            raise DimensionError(f"transposed_conv2d: bias shape {bias.shape} != ({o},)")
        out = out + bias.data.reshape(1, o, 1, 1)
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def backward(g):
        gcols = kernels.im2col(_pad(g, pad), k, stride)  # (N, O*k*k, H*W)
        if x.requires_grad:
            x._accumulate(np.matmul(wmat, gcols).reshape(x.shape))
        if weight.requires_grad:
            weight._accumulate(np.matmul(xm, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(out, parents, backward)


def global_avg_pool(x) -> Tensor:
    """(N, C, H, W) -> (N, C, 1, 1) spatial mean."""
    x = _wrap(x)
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected 4-D input, got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = x.data.sum(axis=(2, 3), keepdims=True) / hw
    return _make(out, (x,), lambda g: x._accumulate(np.broadcast_to(g / hw, x.shape)))


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape (N, in) and weight (out, in)."""
    x, weight = _wrap(x), _wrap(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return _make(out, parents, backward)


def upsample_nearest(x, factor: int) -> Tensor:
    x = _wrap(x)
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest: expected 4-D input, got {x.shape}")
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        x._accumulate(g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return _make(out, (x,), backward)


def avg_pool2d(x, factor: int) -> Tensor:
    """Non-overlapping ``factor`` x ``factor`` mean pooling."""
    x = _wrap(x)
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise DimensionError(f"avg_pool2d: {h}x{w} not divisible by {factor}")
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
    inv = 1.0 / (factor * factor)

    def backward(g):
        x._accumulate((g * inv).repeat(factor, axis=2).repeat(factor, axis=3))

    return _make(out, (x,), backward)
