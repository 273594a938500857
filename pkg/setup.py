import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffast-math lets gcc vectorise exp() through glibc's libmvec; it is passed
# to the compile step only so crtfastmath.o is never linked into the process.
# MORSEFLOW_PORTABLE=1 builds plain -O3 scalar code for other machines.
if os.environ.get("MORSEFLOW_PORTABLE"):
    compile_args = ["-O3"]
    libraries = ["m"]
else:
    compile_args = ["-O3", "-ffast-math", "-march=native", "-mprefer-vector-width=512"]
    libraries = ["m", "mvec"]

ext_modules = [
    Extension(
        "morseflow._ckernels",
        sources=["src/morseflow/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
        libraries=libraries,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        ext_modules,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
)
