"""Build script for the compiled training kernels.

The package works without the extension: whittleq.kernels falls back to the
pure numpy implementation when the compiled module is absent, so the build
degrades gracefully on hosts without a C toolchain.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "whittleq.kernels._fastloops",
                ["src/whittleq/kernels/_fastloops.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
