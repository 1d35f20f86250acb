import os

from setuptools import Extension, setup

# The compiled kernel is an optional speedup; cola.numerics falls back to the
# NumPy implementation when the extension is absent (COLA_SKIP_EXT=1 skips the
# build entirely).
ext_modules = []
if not os.environ.get("COLA_SKIP_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "cola.numerics._conv_cy",
                    ["src/cola/numerics/_conv_cy.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
