from setuptools import Extension, setup
from Cython.Build import cythonize

ext_modules = [
    Extension(
        "glomkit.kernels._ext",
        sources=["src/glomkit/kernels/_ext.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
