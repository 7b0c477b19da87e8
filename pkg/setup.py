import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled kernels are optional: without Cython (or a C compiler) the
# package falls back to the NumPy implementations in sfshybrid._kernels.pure.
ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "sfshybrid._kernels._native",
                ["src/sfshybrid/_kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
