"""Build the optional Cython kernel; the package works without it."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("DYNOGRAPH_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension(
                "dynograph._kernels",
                ["src/dynograph/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no fast-math / fp contraction: the fallback must agree bit for bit
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
