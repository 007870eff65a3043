"""Build script for the compiled trajectory kernel.

The package works without the extension (a numpy fallback is selected at
import time); the extension only accelerates the per-trajectory stepping
loop.  -ffp-contract=off keeps the compiled arithmetic in plain IEEE
operation order so both backends produce matching streams of states.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "cmps_lab._kernels.jump_cython",
        ["src/cmps_lab/_kernels/jump_cython.pyx"],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

if cythonize is not None:
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
