"""Build the optional compiled kernels; the package works without them."""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TSVFSIM_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("tsvfsim._kernels", ["src/tsvfsim/_kernels.pyx"], include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:  # Cython or numpy missing: pure-Python fallback only
        ext_modules = []

setup(ext_modules=ext_modules)
