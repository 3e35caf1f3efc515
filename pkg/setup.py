from setuptools import setup, find_packages

setup(
    name="bsvie-rep",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "pydantic",
        "python-dotenv",
    ],
    extras_require={
        "test": ["pytest"],
    },
    entry_points={
        "console_scripts": [
            "bsvie-rep=src.main:main",
        ],
    },
    author="Devon",
    description="Representation solvers and verifiers for backward stochastic Volterra integral equations",
    keywords="bsvie, bsde, parabolic pde, feynman-kac, monte carlo",
    python_requires=">=3.9",
)
