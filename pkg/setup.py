import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DR_GLM_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "dr_glm._kernels._ckernels",
                    sources=["src/dr_glm/_kernels/_ckernels.pyx"],
                    libraries=["m"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": 3, "embedsignature": True},
        )

setup(ext_modules=ext_modules)
