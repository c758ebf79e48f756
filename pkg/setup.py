"""Build the optional compiled core.

The package works without it: ``rheaom._backend`` falls back to the
pure-Python kernels when ``rheaom._core`` cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("RHEAOM_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "rheaom._core",
                    ["src/rheaom/_core.pyx"],
                    include_dirs=[np.get_include()],
                    # bit-for-bit parity with the Python kernels needs strict IEEE ops
                    extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
