"""Build script for the optional compiled kernel core.

The package works without the extension (a numpy fallback is selected at
import time), so a missing compiler or Cython must not break installation.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:  # pure-python install
    np = None
    cythonize = None


class optional_build_ext(build_ext):
    """build_ext that degrades to the pure-python fallback on failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # no compiler
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(f"WARNING: compiled kernels unavailable ({exc}); "
              "falling back to numpy implementations")


if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "augem.kernels._cyops",
                sources=["src/augem/kernels/_cyops.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
