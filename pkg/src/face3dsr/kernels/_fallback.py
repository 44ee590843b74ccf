"""Pure numpy implementations of the hot kernels.

These define the reference semantics. The compiled module must produce
bit-identical output, so the floating-point operation order here is part of
the contract: edge functions are ``(px - ax) * dy - (py - ay) * dx`` and
depth is ``b0 * z0 + b1 * z1 + b2 * z2``, all in float64.
"""
from __future__ import annotations

import math

import numpy as np


def im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N, C, H, W) padded input -> (N, C*k*k, Ho*Wo) patch matrix."""
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, C, Ho, Wo, k, k) -> (N, C, k, k, Ho, Wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, ho * wo)


def col2im(cols: np.ndarray, c: int, h: int, w: int, k: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches into an (N, C, H, W) array."""
    n = cols.shape[0]
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    for ky in range(k):
        ye = ky + stride * (ho - 1) + 1
        for kx in range(k):
            xe = kx + stride * (wo - 1) + 1
            out[:, :, ky:ye:stride, kx:xe:stride] += cols[:, :, ky, kx]
    return out


def rasterize(screen: np.ndarray, tris: np.ndarray, height: int, width: int):
    """Z-buffered rasterization of screen-space triangles.

    Parameters
    ----------
    screen : (V, 3) float64
        Pixel x, pixel y (down) and inverse depth per vertex. Vertices with
        non-positive inverse depth are behind the camera.
    tris : (T, 3) int
        Vertex indices.

    Returns
    -------
    tri_id : (H, W) int32, -1 where uncovered
    bary : (H, W, 3) float64 barycentric weights in the triangle's own
        corner order
    zbuf : (H, W) float64 inverse depth of the winning fragment, 0 if none
    skipped : (degenerate, behind) counts
    """
    screen = np.ascontiguousarray(screen, dtype=np.float64)
    tris = np.ascontiguousarray(tris, dtype=np.int64)
    tri_id = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    zbuf = np.zeros((height, width), dtype=np.float64)
    degenerate = 0
    behind = 0
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t]
        x0, y0, z0 = screen[i0]
        x1, y1, z1 = screen[i1]
        x2, y2, z2 = screen[i2]
        if z0 <= 0.0 or z1 <= 0.0 or z2 <= 0.0:
            behind += 1
            continue
        area = (x2 - x0) * (y1 - y0) - (y2 - y0) * (x1 - x0)
        if area == 0.0 or not math.isfinite(area):
            degenerate += 1
            continue
        flip = area < 0.0
        if flip:
            x1, y1, z1, x2, y2, z2 = x2, y2, z2, x1, y1, z1
            area = -area
        xmin = int(_clip(math.floor(min(x0, x1, x2) - 0.5), 0, width))
        xmax = int(_clip(math.ceil(max(x0, x1, x2) - 0.5), -1, width - 1))
        ymin = int(_clip(math.floor(min(y0, y1, y2) - 0.5), 0, height))
        ymax = int(_clip(math.ceil(max(y0, y1, y2) - 0.5), -1, height - 1))
        if xmin > xmax or ymin > ymax:
            continue
        px = np.arange(xmin, xmax + 1, dtype=np.float64)[None, :] + 0.5
        py = np.arange(ymin, ymax + 1, dtype=np.float64)[:, None] + 0.5
        e0 = _edge(x1, y1, x2, y2, px, py)
        e1 = _edge(x2, y2, x0, y0, px, py)
        e2 = _edge(x0, y0, x1, y1, px, py)
        inside = (
            _owned(e0, x1, y1, x2, y2)
            & _owned(e1, x2, y2, x0, y0)
            & _owned(e2, x0, y0, x1, y1)
        )
        if not inside.any():
            continue
        b0 = e0 / area
        b1 = e1 / area
        b2 = e2 / area
        z = b0 * z0 + b1 * z1 + b2 * z2
        zb = zbuf[ymin : ymax + 1, xmin : xmax + 1]
        win = inside & (z > zb)
        if not win.any():
            continue
        zb[win] = z[win]
        tri_id[ymin : ymax + 1, xmin : xmax + 1][win] = t
        bt = bary[ymin : ymax + 1, xmin : xmax + 1]
        if flip:
            b1, b2 = b2, b1
        bt[..., 0][win] = b0[win]
        bt[..., 1][win] = b1[win]
        bt[..., 2][win] = b2[win]
    return tri_id, bary, zbuf, (degenerate, behind)


def _clip(v, lo, hi):
    return lo if v < lo else (hi if v > hi else v)


def _edge(ax, ay, bx, by, px, py):
    return (px - ax) * (by - ay) - (py - ay) * (bx - ax)


def _owned(e, ax, ay, bx, by):
    # top-left rule: pixels exactly on an edge belong to left and top edges
    dy = by - ay
    dx = bx - ax
    if dy > 0.0 or (dy == 0.0 and dx < 0.0):
        return e >= 0.0
    return e > 0.0
