"""Hot per-pixel kernels with a compiled core and a numpy fallback.

The Cython extension is preferred when it imported cleanly; setting the
environment variable ``AUGEM_PURE_PYTHON=1`` forces the numpy fallback.
Both backends compute identical float64 results (see ``_npops``).
"""

import os

from . import _npops

if os.environ.get("AUGEM_PURE_PYTHON", "") == "1":
    _impl = _npops
    BACKEND = "numpy"
else:
    try:
        from . import _cyops as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _npops
        BACKEND = "numpy"

warp_affine = _impl.warp_affine
smooth3x3 = _impl.smooth3x3

__all__ = ["warp_affine", "smooth3x3", "BACKEND"]
