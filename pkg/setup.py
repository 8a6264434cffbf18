#!/usr/bin/env python3
"""
Packaging for the cooperative bandit simulator

Usage:
    pip install -e .
    bandit-sbm --help
"""
from pathlib import Path

from setuptools import find_packages, setup

ROOT = Path(__file__).parent


def read_requirements() -> list:
    """Runtime requirements, skipping comments and test-only packages"""
    requirements = []
    for line in (ROOT / "requirements.txt").read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line and not line.startswith("pytest"):
            requirements.append(line)
    return requirements


setup(
    name="bandit-sbm",
    version="0.1.0",
    description="Cooperative multi-agent bandits on time-varying stochastic block model graphs",
    packages=find_packages(exclude=["bandit_sbm.tests"]),
    python_requires=">=3.10",
    install_requires=read_requirements(),
    extras_require={"test": ["pytest>=8.0", "pytest-cov>=4.1"]},
    entry_points={"console_scripts": ["bandit-sbm=bandit_sbm.cli:app"]},
)
