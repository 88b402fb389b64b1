from setuptools import setup, Extension

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "groundact.nn._fastkern",
        ["src/groundact/nn/_fastkern.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
