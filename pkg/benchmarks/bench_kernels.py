"""Timing comparison of the compiled image kernels vs the numpy fallback.

Runs the two hot kernels (bilinear affine warp, 3x3 smoothing) on a
batch of synthetic images through both backends, checks they agree
bit-for-bit, and prints a small table.  Usage::

    python3 benchmarks/bench_kernels.py [--repeats 50] [--side 28]
"""

from __future__ import annotations

import argparse
import importlib
import math
import os
import sys
import time

import numpy as np


def _load_backends():
    """Returns {backend_name: module} for every available implementation."""
    from augem.kernels import _npops

    backends = {"numpy": _npops}
    try:
        from augem.kernels import _cyops
        backends["compiled"] = _cyops
    except ImportError:
        pass
    return backends


def _bench(fn, args, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50,
                        help="take the best of this many timings")
    parser.add_argument("--side", type=int, default=28,
                        help="square image side length")
    parser.add_argument("--batch", type=int, default=64,
                        help="images per timed call (looped)")
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    imgs = rng.random((args.batch, args.side, args.side, 3))
    theta = math.radians(15.0)
    affine = (math.cos(theta), -math.sin(theta), 1.5,
              math.sin(theta), math.cos(theta), -0.5, 0.0)

    backends = _load_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing numpy fallback only")

    cases = {
        "warp_affine": lambda mod: [mod.warp_affine(im, *affine)
                                    for im in imgs],
        "smooth3x3": lambda mod: [mod.smooth3x3(im) for im in imgs],
    }

    # agreement first: identical float64 arithmetic is part of the contract
    if "compiled" in backends:
        for name, call in cases.items():
            a = call(backends["numpy"])
            b = call(backends["compiled"])
            for x, y in zip(a, b):
                if not np.array_equal(x, y):
                    print(f"MISMATCH in {name}: backends disagree")
                    return 1
        print(f"agreement: both backends bit-identical on "
              f"{args.batch} images\n")

    width = max(len(n) for n in cases)
    header = f"{'kernel':<{width}}  " + "".join(f"{n:>12}" for n in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, call in cases.items():
        times = {n: _bench(call, (mod,), args.repeats)
                 for n, mod in backends.items()}
        row = f"{name:<{width}}  " + "".join(
            f"{times[n] * 1e3:>10.2f}ms" for n in backends)
        if len(backends) == 2:
            row += f"{times['numpy'] / times['compiled']:>9.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
