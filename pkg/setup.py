from setuptools import setup, Extension

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "hydronmpc._kernels._core",
                ["src/hydronmpc/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
else:
    # The package still works without the compiled core: the pure numpy
    # kernel backend is selected at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
