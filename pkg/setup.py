"""Build script: compiles the optional fast kernels extension.

Set PROTOTUNE_NO_EXT=1 to skip the extension entirely; the package then
runs on the pure-numpy kernels selected automatically at import time.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("PROTOTUNE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "prototune._ckernels",
                    ["src/prototune/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
