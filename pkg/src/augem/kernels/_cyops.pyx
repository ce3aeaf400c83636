# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-pixel kernels.

Arithmetic mirrors `_npops` exactly (same association order) so the two
backends produce bit-identical float64 output.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def warp_affine(cnp.ndarray[cnp.float64_t, ndim=3] img,
                double a, double b, double c,
                double d, double e, double f, double fill):
    """Inverse-map affine warp with bilinear sampling (see `_npops`)."""
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t ch = img.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((h, w, ch), dtype=np.float64)
    cdef double[:, :, ::1] src = np.ascontiguousarray(img)
    cdef double[:, :, ::1] dst = out

    cdef Py_ssize_t x, y, k
    cdef double xs, ys, fx, fy, fx0, fy0
    cdef double v00, v01, v10, v11, top, bot
    cdef long x0, y0, x1, y1
    cdef bint in00, in01, in10, in11

    for y in range(h):
        for x in range(w):
            xs = a * x + b * y + c
            ys = d * x + e * y + f
            fx0 = floor(xs)
            fy0 = floor(ys)
            fx = xs - fx0
            fy = ys - fy0
            x0 = <long> fx0
            y0 = <long> fy0
            x1 = x0 + 1
            y1 = y0 + 1
            in00 = 0 <= y0 < h and 0 <= x0 < w
            in01 = 0 <= y0 < h and 0 <= x1 < w
            in10 = 0 <= y1 < h and 0 <= x0 < w
            in11 = 0 <= y1 < h and 0 <= x1 < w
            for k in range(ch):
                v00 = src[y0, x0, k] if in00 else fill
                v01 = src[y0, x1, k] if in01 else fill
                v10 = src[y1, x0, k] if in10 else fill
                v11 = src[y1, x1, k] if in11 else fill
                top = (1.0 - fx) * v00 + fx * v01
                bot = (1.0 - fx) * v10 + fx * v11
                dst[y, x, k] = (1.0 - fy) * top + fy * bot
    return out


def smooth3x3(cnp.ndarray[cnp.float64_t, ndim=3] img):
    """3x3 smoothing filter with border copy (see `_npops`)."""
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t ch = img.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.array(img, dtype=np.float64, copy=True)
    if h < 3 or w < 3:
        return out
    cdef double[:, :, ::1] src = np.ascontiguousarray(img)
    cdef double[:, :, ::1] dst = out
    cdef Py_ssize_t x, y, k
    cdef double s8
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            for k in range(ch):
                s8 = (((((((src[y - 1, x - 1, k] + src[y - 1, x, k])
                           + src[y - 1, x + 1, k]) + src[y, x - 1, k])
                         + src[y, x + 1, k]) + src[y + 1, x - 1, k])
                       + src[y + 1, x, k]) + src[y + 1, x + 1, k])
                dst[y, x, k] = (s8 + 5.0 * src[y, x, k]) / 13.0
    return out
