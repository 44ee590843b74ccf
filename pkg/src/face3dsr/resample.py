"""Separable bicubic resampling with the Keys kernel (a = -0.5).

Downsampling stretches the kernel by the scale factor (antialiasing), as
image-resize tools conventionally do; sample positions follow the
pixel-centre convention ``src = (dst + 0.5) * scale - 0.5``. Taps falling
outside the image are clamped to the border pixel. Weights are normalised
to sum to one and applied in float64, so constant images come back exact.
"""
from __future__ import annotations

import math

import numpy as np

KEYS_A = -0.5


def keys_kernel(x, a: float = KEYS_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resize_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """Dense (n_out, n_in) interpolation matrix for one axis."""
    scale = n_in / n_out
    stretch = scale if (antialias and scale > 1) else 1.0
    support = 2.0 * stretch
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        lo = math.floor(center - support) + 1
        hi = math.ceil(center + support) - 1
        taps = np.arange(lo, hi + 1)
        w = keys_kernel((center - taps) / stretch) / stretch
        w /= w.sum()
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), w)
    return mat


def resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize a (C, H, W) or (H, W) array; returns float32."""
    arr = np.asarray(img, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    mh = resize_matrix(arr.shape[1], out_h, antialias)
    mw = resize_matrix(arr.shape[2], out_w, antialias)
    out = np.einsum("oh,chw,pw->cop", mh, arr, mw, optimize=True)
    out = out.astype(np.float32)
    return out[0] if squeeze else out


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic downsampling of a (C, H, W) image by an integer factor."""
    if scale not in (4, 8):
        raise ValueError(f"unsupported scale {scale}; expected 4 or 8")
    _, h, w = hr.shape
    if h % scale or w % scale:
        raise ValueError(f"image size {h}x{w} is not divisible by scale {scale}")
    return resize(hr, h // scale, w // scale)
