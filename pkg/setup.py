"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile degrades to a pure-Python install instead
of breaking it. Set PROTOGZSL_SKIP_CYTHON=1 to skip the compile explicitly.
"""

import os

from setuptools import setup


def _extensions():
    if os.environ.get("PROTOGZSL_SKIP_CYTHON"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "protogzsl.kernels._ckern",
        ["src/protogzsl/kernels/_ckern.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
