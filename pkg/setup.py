import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    USE_CYTHON = True
except ImportError:
    USE_CYTHON = False

# MDCVAE_NO_EXT=1 skips the compiled core entirely (pure-numpy fallback only).
SKIP_EXT = os.environ.get("MDCVAE_NO_EXT", "") == "1"


def _extensions():
    if SKIP_EXT or not USE_CYTHON:
        return []
    ext = Extension(
        "mdcvae._kernels",
        ["src/mdcvae/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
        optional=True,
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=_extensions())
