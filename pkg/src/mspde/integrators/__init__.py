"""Time steppers for the three schemes plus single-cell solvers.

* ``lrbf``: collocation-midpoint stepping on interior grid nodes (all
  three systems), with exact tangent (variational) propagation.
* ``box``: full-grid assembly of the one-stage splitting and partitioned
  schemes as a box scheme on cell midpoints.
* ``cells``: generic-stage single-cell solvers used for conservation
  verification.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

SOLVER_METHODS = ("fixed-point", "newton-krylov")


@dataclass(frozen=True)
class SolverPolicy:
    """How implicit systems are solved each step.

    ``fixed-point`` lags the nonlinear terms and solves the prefactored
    linear part exactly every sweep; ``newton-krylov`` hands the full
    residual to a matrix-free Newton iteration. Residuals are measured
    in the max norm on the increment form of the scheme equations
    (every equation scaled by its own dt factor, as in the one-step
    update written with increments).
    """

    method: str = "fixed-point"
    tol: float = 1e-12
    max_iter: int = 100
    damping: float = 1.0

    def __post_init__(self):
        if self.method not in SOLVER_METHODS:
            raise ConfigError(f"solver.method: unknown method {self.method!r}")
        if self.tol <= 0:
            raise ConfigError("solver.tol: tolerance must be positive")
        if self.max_iter < 1:
            raise ConfigError("solver.max_iter: need at least one iteration")
        if not 0 < self.damping <= 1:
            raise ConfigError("solver.damping: damping must lie in (0, 1]")


class GridState:
    """Component node-vectors of one time level.

    ``grid`` holds the coordinates the components live on (interior
    nodes for the collocation scheme, cell midpoints for the box
    schemes); all component vectors share that length.
    """

    def __init__(self, system, grid, components, time=0.0):
        self.system = system
        self.grid = np.asarray(grid, dtype=float)
        self.components = {k: np.asarray(v, dtype=float) for k, v in components.items()}
        for name, vec in self.components.items():
            if vec.shape != self.grid.shape:
                raise ValueError(f"component {name!r} has shape {vec.shape}, "
                                 f"grid has {self.grid.shape}")
        self.time = float(time)

    def __getitem__(self, name):
        return self.components[name]

    def copy(self, time=None):
        return GridState(self.system, self.grid,
                         {k: v.copy() for k, v in self.components.items()},
                         self.time if time is None else time)

    def stack(self, names):
        return np.stack([self.components[n] for n in names])


from .lrbf import ExplicitEulerWaveStepper, LRBFMidpointStepper  # noqa: E402
from .box import KdVBoxStepper, NLSBoxStepper, WaveBoxStepper, make_box_stepper  # noqa: E402
from .cells import CellSolution, solve_cell  # noqa: E402


def step_lrbf_midpoint(state, D, dW, dt, policy=None):
    """One collocation-midpoint step. Loops should hold an LRBFMidpointStepper."""
    stepper = LRBFMidpointStepper(state.system, D, dt, policy or SolverPolicy())
    return stepper.step(state, dW)


def step_splitting(state, dW, dt, dx, policy=None):
    """One splitting step (deterministic box sub-step, then the exact noise map)."""
    stepper = make_box_stepper(state.system, state.grid, dx, dt,
                               policy or SolverPolicy(), scheme="splitting")
    return stepper.step(state, dW)


def step_prk(state, dW, dt, dx, policy=None):
    """One partitioned step with noise inside the stage equations (wave only)."""
    stepper = make_box_stepper(state.system, state.grid, dx, dt,
                               policy or SolverPolicy(), scheme="prk")
    return stepper.step(state, dW)


__all__ = [
    "SolverPolicy", "GridState",
    "LRBFMidpointStepper", "ExplicitEulerWaveStepper",
    "WaveBoxStepper", "NLSBoxStepper", "KdVBoxStepper", "make_box_stepper",
    "CellSolution", "solve_cell",
    "step_lrbf_midpoint", "step_splitting", "step_prk",
]
