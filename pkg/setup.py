"""Build the optional Cython kernels.

Usage:
    python setup.py build_ext --inplace

If compilation fails the package still imports and runs on the numpy
fallback in ``robustform._fallback``.
"""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ROBUSTFORM_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - build machine without cython
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "robustform._kernels",
                    sources=["src/robustform/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "language_level": "3",
            },
        )

setup(ext_modules=ext_modules)
