import os

import numpy as np
from setuptools import Extension, setup

extensions = []
pyx = os.path.join("src", "mspde", "_kernels", "_march.pyx")
if os.path.exists(pyx):
    try:
        from Cython.Build import cythonize

        extensions = cythonize(
            [
                Extension(
                    "mspde._kernels._march",
                    [pyx],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        pass

setup(ext_modules=extensions)
