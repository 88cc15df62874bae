#!/usr/bin/env python
"""Spectral Koopman control: diagonal-spectrum latent dynamics, LQR-conditioned soft actor-critic, system
identification and compute benchmarks on simulated control tasks."""

from setuptools import find_packages, setup

from skclib._version import __skc_version__

setup(
    name='spectral-koopman-control',
    version=__skc_version__,
    packages=find_packages(exclude=['tests', 'documentation', 'conda-recipe']),
    include_package_data=True,
    package_data={'skclib': ['*.json']},
    scripts=['SpectralKoopman-control.py', 'GroupedSeedSweep.py'],
    install_requires=['numpy', 'scipy', 'pandas'],
    extras_require={'test': ['pytest']},
    python_requires='>=3.8',
)
