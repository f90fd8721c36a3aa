"""Build the optional compiled kernels.

    pip install -e . --no-build-isolation

If Cython or a compiler is missing the package still installs and
falls back to the numpy implementations in ``spectrallab._fallback``.
"""
from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "spectrallab._kernels",
                ["src/spectrallab/_kernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
