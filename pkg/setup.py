"""Builds the optional compiled convolution kernels.

The package is pure Python by default; run

    python setup.py build_ext --inplace

to compile the Cython kernels (requires cython + a C compiler). Without
them the numpy im2col implementation is used.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "gazedistill.tensorcore.kernels._convcy",
                ["src/gazedistill/tensorcore/kernels/_convcy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ]
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
