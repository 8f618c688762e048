# -*- coding: utf-8 -*-
"""
Setup.py.

Check https://packaging.python.org/tutorials/packaging-projects/
https://setuptools.readthedocs.io/en/latest/setuptools.html#including-data-files
"""
from setuptools import setup, find_packages

with open("README.rst", "r") as f:
    long_description = f.read()

setup(
    name="progDilUNet",
    version="0.1.0",
    description="Progressive dilated UNet segmentation engine written with numpy",
    long_description=long_description,
    long_description_content_type="text/x-rst",
    packages=find_packages(exclude=["tests", "examples*"]),
    zip_safe=False,
    python_requires=">=3.8",
    entry_points={
        "console_scripts": [
            "prog_dil_unet=progDilUNet.main:main_prg",
        ]
    },
    install_requires=[
        "numpy",
        "pandas",
        "scipy",
    ],
    extras_require={
        "dev": ["mypy", "flake8", "black"],
        "test": ["pytest", "hypothesis"],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: GNU General Public License (GPL)",
        "Natural Language :: English",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.8",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "Topic :: Scientific/Engineering :: Medical Science Apps.",
    ],
    package_data={"Doc": ["*txt"]},
)
