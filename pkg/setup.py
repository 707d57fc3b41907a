import os

import numpy as np
from setuptools import Extension, setup

# VPCLT_NO_EXT=1 skips the compiled core; the package then runs on the numpy fallback.
ext_modules = []
if not os.environ.get("VPCLT_NO_EXT"):
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "vpclt._kernels",
            ["src/vpclt/_kernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )

setup(ext_modules=ext_modules)
