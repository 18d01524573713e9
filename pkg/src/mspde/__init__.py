"""Structure-preserving integrators for 1-D stochastic Hamiltonian PDEs.

The package covers three multi-symplectic discretizations of systems of
the form M dz + K z_x dt = grad S1 dt + grad S2 o dW (wave, nonlinear
Schroedinger, KdV): a local-RBF collocation midpoint scheme, a splitting
Runge-Kutta scheme, and a partitioned Runge-Kutta scheme. It also
verifies their discrete conservation laws at runtime through tangent
propagation, and runs mean-square convergence and energy-evolution
experiments from a CLI.
"""

__version__ = "0.1.0"

from . import geometry, integrators, mc, qwiener, rbf, systems, tableau  # noqa: F401
from ._kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
