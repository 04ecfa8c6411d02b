"""Build script for the compiled convolution kernels.

The extension is optional: if the toolchain is unavailable the package
falls back to the numpy kernels at import time (see gaf.kernels).
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "gaf._conv",
                ["src/gaf/_conv.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=extensions)
