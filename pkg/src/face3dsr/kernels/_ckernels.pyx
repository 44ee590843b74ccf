# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_fallback``; same semantics, same op order."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, isfinite
from libc.string cimport memcpy

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c * k * k, ho * wo), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, ky, kx, oy, ox, row
    cdef real* dst
    cdef const real* src
    if out_arr.size == 0:
        return out_arr
    for b in range(n):
        for ch in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (ch * k + ky) * k + kx
                    for oy in range(ho):
                        dst = &out[b, row, oy * wo]
                        src = &x[b, ch, oy * stride + ky, kx]
                        if stride == 1:
                            # a stride-1 output row is a contiguous run of the input row
                            memcpy(dst, src, wo * sizeof(real))
                        else:
                            for ox in range(wo):
                                dst[ox] = src[ox * stride]
    return out_arr


def col2im(real[:, :, ::1] cols, int c, int h, int w, int k, int stride):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, ky, kx, oy, ox, row, base
    # loop order (ky, kx) outermost per channel matches the numpy fallback's
    # accumulation order, keeping results bit-identical
    for b in range(n):
        for ch in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (ch * k + ky) * k + kx
                    for oy in range(ho):
                        base = oy * wo
                        for ox in range(wo):
                            out[b, ch, oy * stride + ky, ox * stride + kx] += cols[b, row, base + ox]
    return out_arr


cdef inline double _clip(double v, double lo, double hi) nogil:
    return lo if v < lo else (hi if v > hi else v)


cdef inline bint _owned(double e, double ax, double ay, double bx, double by) nogil:
    cdef double dy = by - ay
    cdef double dx = bx - ax
    if dy > 0.0 or (dy == 0.0 and dx < 0.0):
        return e >= 0.0
    return e > 0.0


def rasterize(screen_in, tris_in, int height, int width):
    cdef double[:, ::1] screen = np.ascontiguousarray(screen_in, dtype=np.float64)
    cdef long long[:, ::1] tris = np.ascontiguousarray(tris_in, dtype=np.int64)
    tri_arr = np.full((height, width), -1, dtype=np.int32)
    bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    zbuf_arr = np.zeros((height, width), dtype=np.float64)
    cdef int[:, ::1] tri_id = tri_arr
    cdef double[:, :, ::1] bary = bary_arr
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef Py_ssize_t t, T = tris.shape[0], px_i, py_i
    cdef long long i0, i1, i2
    cdef double x0, y0, z0, x1, y1, z1, x2, y2, z2, tmp, area
    cdef double px, py, e0, e1, e2, b0, b1, b2, z
    cdef int xmin, xmax, ymin, ymax
    cdef bint flip
    cdef long degenerate = 0, behind = 0
    for t in range(T):
        i0 = tris[t, 0]; i1 = tris[t, 1]; i2 = tris[t, 2]
        x0 = screen[i0, 0]; y0 = screen[i0, 1]; z0 = screen[i0, 2]
        x1 = screen[i1, 0]; y1 = screen[i1, 1]; z1 = screen[i1, 2]
        x2 = screen[i2, 0]; y2 = screen[i2, 1]; z2 = screen[i2, 2]
        if z0 <= 0.0 or z1 <= 0.0 or z2 <= 0.0:
            behind += 1
            continue
        area = (x2 - x0) * (y1 - y0) - (y2 - y0) * (x1 - x0)
        if area == 0.0 or not isfinite(area):
            degenerate += 1
            continue
        flip = area < 0.0
        if flip:
            tmp = x1; x1 = x2; x2 = tmp
            tmp = y1; y1 = y2; y2 = tmp
            tmp = z1; z1 = z2; z2 = tmp
            area = -area
        xmin = <int>_clip(floor(min(x0, x1, x2) - 0.5), 0.0, width)
        xmax = <int>_clip(ceil(max(x0, x1, x2) - 0.5), -1.0, width - 1.0)
        ymin = <int>_clip(floor(min(y0, y1, y2) - 0.5), 0.0, height)
        ymax = <int>_clip(ceil(max(y0, y1, y2) - 0.5), -1.0, height - 1.0)
        for py_i in range(ymin, ymax + 1):
            py = py_i + 0.5
            for px_i in range(xmin, xmax + 1):
                px = px_i + 0.5
                e0 = (px - x1) * (y2 - y1) - (py - y1) * (x2 - x1)
                if not _owned(e0, x1, y1, x2, y2):
                    continue
                e1 = (px - x2) * (y0 - y2) - (py - y2) * (x0 - x2)
                if not _owned(e1, x2, y2, x0, y0):
                    continue
                e2 = (px - x0) * (y1 - y0) - (py - y0) * (x1 - x0)
                if not _owned(e2, x0, y0, x1, y1):
                    continue
                b0 = e0 / area
                b1 = e1 / area
                b2 = e2 / area
                z = b0 * z0 + b1 * z1 + b2 * z2
                if z > zbuf[py_i, px_i]:
                    zbuf[py_i, px_i] = z
                    tri_id[py_i, px_i] = <int>t
                    bary[py_i, px_i, 0] = b0
                    if flip:
                        bary[py_i, px_i, 1] = b2
                        bary[py_i, px_i, 2] = b1
                    else:
                        bary[py_i, px_i, 1] = b1
                        bary[py_i, px_i, 2] = b2
    return tri_arr, bary_arr, zbuf_arr, (degenerate, behind)
