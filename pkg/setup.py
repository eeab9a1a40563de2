#!/usr/bin/env python3
"""
Setup script for chlab, the stochastic Cahn-Hilliard numerical laboratory
"""

import re
from pathlib import Path

from setuptools import setup

HERE = Path(__file__).parent


def read_version():
    """Read __version__ from the package without importing it."""
    text = (HERE / "source" / "chlab" / "__init__.py").read_text(encoding="utf-8")
    return re.search(r'^__version__ = "([^"]+)"', text, re.MULTILINE).group(1)


def read_requirements():
    """Runtime requirements; the pytest packages go to the test extra."""
    lines = (HERE / "requirements.txt").read_text(encoding="utf-8").splitlines()
    return [line for line in lines if line and not line.startswith("pytest")]


setup(
    name="chlab",
    version=read_version(),
    description="Finite differences, exponential Euler and Monte-Carlo studies "
                "for the stochastic Cahn-Hilliard equation",
    long_description=(HERE / "README.md").read_text(encoding="utf-8"),
    long_description_content_type="text/markdown",
    package_dir={"": "source"},
    packages=["chlab"],
    python_requires=">=3.9",
    install_requires=read_requirements(),
    extras_require={"test": ["pytest>=7.0.0", "pytest-cov>=4.0.0"]},
    entry_points={"console_scripts": ["chlab = chlab.cli:main"]},
)
