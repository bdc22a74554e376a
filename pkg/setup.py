"""Build hook: compiles the optional retrieval kernel extension.

The package is fully functional without the extension (a pure-Python
fallback is selected at import time); the build therefore degrades
gracefully when Cython or a C compiler is unavailable.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "longview.retrieval._kernels_c",
                ["src/longview/retrieval/_kernels_c.pyx"],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
