"""Build script for the optional compiled kernel extension.

Set LSGATTN_PURE=1 to skip the extension entirely; the package then runs on
the pure numpy backend selected at import time.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("LSGATTN_PURE"):
    import numpy
    from Cython.Build import cythonize

    # -ffp-contract=off: no FMA contraction, so compiled results match the
    # pure backend's separate multiply/add roundings bit for bit.
    ext_modules = cythonize(
        [
            Extension(
                "lsgattn.backends._kernels",
                ["src/lsgattn/backends/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": 3,
        },
    )

setup(ext_modules=ext_modules)
