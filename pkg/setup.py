"""Build script: compiles the optional Cython stepping kernel.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed build only costs speed.  -ffp-contract=off keeps
the compiled kernel bit-identical to the NumPy backend.
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
                "slowsde._kernels",
                ["src/slowsde/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
