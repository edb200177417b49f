from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "scavstore.chunking._scan",
                ["src/scavstore/chunking/_scan.pyx"],
                extra_compile_args=["-O2"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython: install pure-Python only, the kernel falls back at import.
    extensions = []

setup(ext_modules=extensions)
