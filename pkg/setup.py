"""Build script: compiles the optional Cython kernel.

The package works without the extension (a pure-Python backend is selected
at import time); grinding is simply much slower. Build in place with:

    python setup.py build_ext --inplace
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CHAINSTEG_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "chainsteg._kernel",
                    sources=["src/chainsteg/_kernel.pyx"],
                    extra_compile_args=[
                        "-O3",
                        "-march=native",
                        "-fno-stack-protector",
                    ],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
