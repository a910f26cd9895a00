import os

import numpy as np
from setuptools import Extension, setup

# CATCACHE_NO_EXT=1 skips the compiled kernels; the package falls back to numpy.
ext_modules = []
if not os.environ.get("CATCACHE_NO_EXT"):
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "catcache._hnsw_ext",
            ["src/catcache/_hnsw_ext.pyx"],
            include_dirs=[np.get_include()],
            language="c++",
            extra_compile_args=["-O3"],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
