import os

import numpy as np
from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
if not os.environ.get("NWSKETCH_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "nwsketch._kernels",
                    ["src/nwsketch/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
