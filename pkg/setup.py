"""Builds the optional compiled kernel core.

The package runs without it (stepsmith.kernels falls back to the numpy
reference implementation), but the compiled module speeds up the recurrent
hot loops considerably; see benchmarks/bench_kernels.py.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "stepsmith.kernels._hot",
                ["src/stepsmith/kernels/_hot.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
