"""Hot inner loops: im2col/col2im for convolutions and the triangle rasterizer.

The compiled Cython module is used when it is importable; otherwise the numpy
fallback is. Set ``FACE3DSR_PURE_PYTHON=1`` to force the fallback. Both
backends return bit-identical results.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("FACE3DSR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def im2col(x, k: int, stride: int):
    if BACKEND == "cython" and x.dtype.kind == "f" and x.flags.c_contiguous:
        return _impl.im2col(x, k, stride)
    return _fallback.im2col(x, k, stride)


def col2im(cols, c: int, h: int, w: int, k: int, stride: int):
    if BACKEND == "cython" and cols.dtype.kind == "f":
        import numpy as np

        return _impl.col2im(np.ascontiguousarray(cols), c, h, w, k, stride)
    return _fallback.col2im(cols, c, h, w, k, stride)


def rasterize(screen, tris, height: int, width: int):
    return _impl.rasterize(screen, tris, height, width)


__all__ = ["BACKEND", "im2col", "col2im", "rasterize"]
