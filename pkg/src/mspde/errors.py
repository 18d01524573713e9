"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical divergence or blow-up exits 3, a failed conservation or
condition check exits 4.
"""


class ConfigError(ValueError):
    """A config file or parameter set is malformed. Message names the offending key."""


class ConditioningError(RuntimeError):
    """A local interpolation system is too ill-conditioned (or degenerate) to trust."""

    def __init__(self, node_index, message):
        self.node_index = node_index
        super().__init__(f"node {node_index}: {message}")


class DivergenceError(RuntimeError):
    """The implicit solver failed to reach the requested residual."""

    def __init__(self, residual, iterations, message="solver did not converge"):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")


class BlowUpError(RuntimeError):
    """NaN or infinity appeared in the state during time stepping."""


class ConservationError(RuntimeError):
    """A conservation-law or tableau-condition check exceeded its tolerance."""
