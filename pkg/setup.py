"""Builds the optional compiled kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    from setuptools import Extension
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "featsep.nn._kernels",
                sources=["src/featsep/nn/_kernels.pyx", "src/featsep/nn/_gates.c"],
                include_dirs=["src/featsep/nn"],
                extra_compile_args=["-O3", "-fopenmp-simd", "-fno-math-errno"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # noqa: BLE001 - any build-chain failure degrades to pure python
    print(f"warning: compiled kernels disabled ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
