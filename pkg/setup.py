"""Build script: compiles the optional Cython speedup kernels.

If Cython or a C compiler is unavailable the build degrades gracefully and
the package falls back to its pure numpy engine at import time.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension


class OptionalBuildExt(build_ext):
    """Treat extension build failures as a soft warning, not an error."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: C extension build skipped ({exc}); "
                  "using pure-python engine", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: building {ext.name} failed ({exc}); "
                  "using pure-python engine", file=sys.stderr)


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - toolchain dependent
        return []
    ext = Extension(
        "sagald._core._speedups",
        ["src/sagald/_core/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        # -ffp-contract=off: the compiled engine must stay bit-identical to
        # the numpy engine, so fused multiply-add contraction is disabled.
        extra_compile_args=["-O2", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
