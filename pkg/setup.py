"""Build script for the optional compiled kernel.

The package is fully functional without the extension; if Cython or a C
compiler is unavailable the install falls back to the pure-Python core.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "enershape._kernel._fastcore",
        sources=["src/enershape/_kernel/_fastcore.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level=3)
except ImportError:
    pass

setup(ext_modules=ext_modules)
