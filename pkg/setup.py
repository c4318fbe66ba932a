"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile must not break installation.
"""

import sys

from setuptools import setup

ext_modules = []
cmdclass = {}

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension
    from setuptools.command.build_ext import build_ext

    class optional_build_ext(build_ext):
        """Swallow compiler failures; the fallback kernels take over."""

        def run(self):
            try:
                super().run()
            except Exception as exc:  # noqa: BLE001
                print(f"scenepeel: skipping compiled kernels ({exc})", file=sys.stderr)

        def build_extension(self, ext):
            try:
                super().build_extension(ext)
            except Exception as exc:  # noqa: BLE001
                print(f"scenepeel: skipping {ext.name} ({exc})", file=sys.stderr)

    ext_modules = cythonize(
        [
            Extension(
                "scenepeel._kernels._native",
                ["src/scenepeel/_kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    cmdclass = {"build_ext": optional_build_ext}
except ImportError as exc:
    print(f"scenepeel: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules, cmdclass=cmdclass)
