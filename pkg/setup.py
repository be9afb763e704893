from setuptools import setup, find_packages

setup(
    name="dvae",
    version="0.0.1",
    description="dual latent (geometry tokens + colour gaussian) vae desk engine",
    author="thejchap",
    packages=find_packages(exclude=["tests"]),
    install_requires=[
        "black",
        "pylint",
        "flake8",
        "mypy",
        "pytest",
        "uvarint",
        "python-snappy",
        "xxhash",
        "structlog",
        "colorama",
        "matplotlib",
        "snakeviz",
        "numpy",
        "scipy",
        "Pillow",
    ],
)
