"""Build script for the compiled Radon kernel.

The extension is optional at runtime: hydra_ct falls back to a pure-numpy
implementation of the same ray-sampling scheme if the compiled module is
missing (see hydra_ct.backend).
"""
import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "hydra_ct._radon_core",
                sources=["src/hydra_ct/_radon_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
