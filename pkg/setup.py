import os

import numpy
from setuptools import Extension, setup


def get_extensions():
    if os.environ.get("SHEPHERD_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "shepherd._kernels",
                ["src/shepherd/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=get_extensions())
