"""Numpy implementations of the per-pixel kernels.

These are the reference semantics; the Cython module `_cyops` mirrors the
exact arithmetic (same association order in the bilinear blend and the
smoothing sum) so both backends produce bit-identical float64 output.
"""

import numpy as np


def warp_affine(img: np.ndarray, a: float, b: float, c: float,
                d: float, e: float, f: float, fill: float) -> np.ndarray:
    """Inverse-map affine warp with bilinear sampling.

    Output pixel at (col=x, row=y) samples the input at
    xs = a*x + b*y + c, ys = d*x + e*y + f.  Samples falling outside the
    grid use `fill` for the out-of-bounds corners.
    """
    h, w, ch = img.shape
    x = np.arange(w, dtype=np.float64)
    y = np.arange(h, dtype=np.float64)[:, None]
    xs = a * x + b * y + c
    ys = d * x + e * y + f

    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1

    def corner(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        yc = np.clip(yi, 0, h - 1)
        xc = np.clip(xi, 0, w - 1)
        vals = img[yc, xc, :]
        return np.where(valid[:, :, None], vals, fill)

    v00 = corner(y0, x0)
    v01 = corner(y0, x1)
    v10 = corner(y1, x0)
    v11 = corner(y1, x1)

    fx = fx[:, :, None]
    fy = fy[:, :, None]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    return (1.0 - fy) * top + fy * bot


def smooth3x3(img: np.ndarray) -> np.ndarray:
    """3x3 smoothing filter (neighbor weight 1, center weight 5, /13).

    Border pixels are copied unchanged; only the interior is filtered.
    """
    out = img.copy()
    if img.shape[0] < 3 or img.shape[1] < 3:
        return out
    v = img
    # fixed left-to-right summation order, mirrored in the compiled kernel
    s8 = (((((((v[:-2, :-2] + v[:-2, 1:-1]) + v[:-2, 2:]) + v[1:-1, :-2])
             + v[1:-1, 2:]) + v[2:, :-2]) + v[2:, 1:-1]) + v[2:, 2:])
    out[1:-1, 1:-1] = (s8 + 5.0 * v[1:-1, 1:-1]) / 13.0
    return out
