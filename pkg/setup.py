import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "nerimf._kernels",
        ["src/nerimf/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        optional=True,  # the NumPy fallback is used when the build fails
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
