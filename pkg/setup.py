"""Build script: compiles the optional fast-kernel extension.

The extension is a speedup only; if Cython or a C compiler is missing the
package installs anyway and falls back to the numpy kernels at import time.
"""
import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "coreseg.kernels._fastkernels",
                ["src/coreseg/kernels/_fastkernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
