"""Build script: compiles the optional Cython alignment kernel.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so a failed compile is not fatal.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "digitvec._kernels._viterbi_cy",
                ["src/digitvec/_kernels/_viterbi_cy.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
