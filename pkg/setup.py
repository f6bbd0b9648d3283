"""Build script: compiles the optional C kernel extension when Cython is available.

The package is fully functional without the extension (a pure-numpy fallback is
selected at import time).  To build the accelerated kernels in place:

    python setup.py build_ext --inplace
"""

import os

from setuptools import Extension, setup

PYX = "src/parapref/kernels/_fastops.pyx"

ext_modules = []
try:
    if not os.path.exists(PYX):
        raise ImportError
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "parapref.kernels._fastops",
                [PYX],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython in the build environment: ship pure python, kernels fall back.
    pass

setup(ext_modules=ext_modules)
