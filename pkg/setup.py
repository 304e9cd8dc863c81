"""Build script for the optional compiled simulation kernel.

The package works without the extension (a pure-Python backend is selected at
import time); building it makes large Monte Carlo sweeps roughly two orders of
magnitude faster.  Set BANDITXD_SKIP_KERNEL=1 to skip compilation explicitly.
"""

import os

from setuptools import Extension, setup


def kernel_extensions():
    if os.environ.get("BANDITXD_SKIP_KERNEL") == "1":
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    npy_random_lib = os.path.join(os.path.dirname(numpy.random.__file__), "lib")
    ext = Extension(
        "banditxd._kernel",
        ["src/banditxd/_kernel.pyx"],
        include_dirs=[numpy.get_include()],
        library_dirs=[npy_random_lib],
        libraries=["npyrandom"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=kernel_extensions())
