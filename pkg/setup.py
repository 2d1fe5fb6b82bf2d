import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back at import
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("EDGEOFFLOAD_NO_EXT"):
    extensions = [
        Extension(
            "edgeoffload._kernels._ckernels",
            ["src/edgeoffload/_kernels/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            # results must match the Python fallback bit for bit: no FMA, no fast-math
            extra_compile_args=["-O3", "-ffp-contract=off"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            optional=True,
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
