"""Build the optional Cython kernel.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes the alternating-update training loop
several times faster.  Build in place with:

    python setup.py build_ext --inplace
"""

from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/debias_mf/kernels/_ridge_cy.pyx",
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
