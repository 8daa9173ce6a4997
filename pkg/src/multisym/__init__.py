"""Multisymplectic continuum mechanics on Riemannian metrics.

Modules
-------
geometry      metrics, Christoffel symbols, covariant acceleration
fields        space-time grids, sections, finite-difference jets
material      stored energies, Legendre transform, stresses
dynamics      Euler-Lagrange residuals and the pressure Poisson check
integrator    variational space-time integrator
conservation  Noether currents and their divergences
cli           ``multisym verify`` and ``multisym run``
"""

from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
