"""
chlab - a numerical laboratory for the stochastic Cahn-Hilliard equation

    du + Delta^2 u dt = Delta f(u) dt + sigma(u) dW   on (0, pi)

with u = Delta u = 0 at the boundary and space-time white noise. The package
provides the finite difference semi-discretization, the exponential Euler
full discretization, forward tangent (Malliavin derivative) propagation and
Monte-Carlo studies of convergence rates, Hoelder exponents and densities.
"""

__version__ = "1.0.0"

from .grid import Field, Mesh, SpectralBasis, build_basis
from .models import ModelFactory
from .noise import SheetIncrements, coarsen, generate, to_beta
from .solver import SolverConfig, Trajectory, simulate

__all__ = [
    "__version__",
    "Field",
    "Mesh",
    "ModelFactory",
    "SheetIncrements",
    "SolverConfig",
    "SpectralBasis",
    "Trajectory",
    "build_basis",
    "coarsen",
    "generate",
    "simulate",
    "to_beta",
]
