"""Exception hierarchy shared across eddylab; the CLI maps these to exit codes."""


class EddyLabError(Exception):
    """Base class for all eddylab errors."""


class ConfigurationError(EddyLabError):
    """Invalid user input: bad tensors, malformed configs, out-of-range arguments."""


class TensorError(ConfigurationError):
    """A 2x2 tensor violates the symmetric-positive-definite contract."""


class RangeError(ConfigurationError):
    """A query lies outside the achieved range of a computed curve."""

    def __init__(self, message: str, achieved_range=None):
        super().__init__(message)
        self.achieved_range = achieved_range


class ResolutionError(EddyLabError):
    """Refusal: the requested computation needs a finer grid than allowed."""

    def __init__(self, message: str, required_n: int | None = None):
        super().__init__(message)
        self.required_n = required_n


class SolverError(EddyLabError):
    """The iterative linear solver failed to reach the requested residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class StatisticalError(EddyLabError):
    """A Monte Carlo run cannot support the requested estimate (e.g. all censored)."""


class ConsistencyError(EddyLabError):
    """An internal invariant failed beyond tolerance; indicates a bug, not bad input."""
