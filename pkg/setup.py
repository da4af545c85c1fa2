from setuptools import find_packages, setup

with open("README.md", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="recshield",
    version="0.1.0",
    author="RecShield",
    description="Private threshold recommendations computed on encrypted predictions of an expert-based model",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(where="src"),
    py_modules=["main"],
    package_dir={"": "src"},
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.24.0",
        "pyyaml>=6.0",
        "rich>=13.0.0",
        "matplotlib>=3.7.0",
        "phe>=1.5.0",
        "gmpy2>=2.1.0",
    ],
    entry_points={
        "console_scripts": [
            "recshield=main:main",
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
)
