import numpy
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [Extension(
            "gridrules.kernels._mlp",
            sources=["src/gridrules/kernels/_mlp.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3", "-march=native", "-ffast-math",
                                "-funroll-loops"],
        )],
        language_level="3",
    )

setup(ext_modules=ext_modules)
