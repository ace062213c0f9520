"""Build the optional compiled compositing kernel.

If Cython or a C compiler is unavailable the package still installs and the
numpy backend is used at import time.
"""
import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build environment dependent
    cythonize = None


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernel not built ({exc}); numpy fallback will be used",
                  file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


ext_modules = []
if cythonize is not None and not os.environ.get("EFREE_NO_EXT"):
    openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
    ext_modules = cythonize(
        [Extension(
            "efree.rasterizer._composite_ext",
            ["src/efree/rasterizer/_composite_ext.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3", *openmp],
            extra_link_args=openmp,
        )],
        language_level=3,
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
