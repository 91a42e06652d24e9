#!/usr/bin/env python3
"""
Setup script for SUC-kit
"""

from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

setup(
    name="suc-kit",
    version="1.0.0",
    description="NLFSR-based Secret Unknown Cipher construction and verification kit",
    long_description=long_description,
    long_description_content_type="text/markdown",
    py_modules=[
        "nlfsr_core",
        "boolean_analysis",
        "feedback_catalog",
        "ksg",
        "suc_genie",
        "cryptanalysis",
        "protocol",
        "cli",
    ],
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Security :: Cryptography",
    ],
    python_requires=">=3.10",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "suc-kit=cli:main",
        ],
    },
    data_files=[("data", ["data/nlfsr_catalog.tsv"])],
    include_package_data=True,
    zip_safe=False,
)
