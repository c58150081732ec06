"""Build the optional Cython LZW kernel.

The package works without the extension (a pure-Python fallback is selected
at import time), but the compiled kernel is roughly two orders of magnitude
faster and the benchmark suite assumes it is present.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "cogstream.codecs._lzwcore",
                ["src/cogstream/codecs/_lzwcore.pyx"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
