"""Build script.

The package is pure Python plus one optional Cython extension holding the
bit-serial MAC / ADC inner loop.  If Cython or a C compiler is unavailable
the extension is skipped and the numpy fallback in
``xbarsim._kernels.fallback`` is used at runtime instead.

Set XBARSIM_SKIP_EXT=1 to force a pure-Python build.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("XBARSIM_SKIP_EXT", "0") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "xbarsim._kernels._core",
                    sources=["src/xbarsim/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # no -ffast-math: addition order is part of the contract
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
