"""Exception hierarchy shared by all modules."""


class CartanLabError(Exception):
    """Base class for every error raised by cartanlab."""


class ConfigurationError(CartanLabError):
    """Unknown label, malformed schedule, unresolved oscillation, bad config."""


class ArgumentError(CartanLabError, ValueError):
    """Operands do not match (degree, grid, algebra or shape)."""


class DegreeError(ArgumentError):
    """Operation is undefined for the degree of its operand."""


class SolverError(CartanLabError):
    """Conjugate gradient failed to reach the requested tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FlowError(CartanLabError):
    """Yang-Mills gradient flow line search failed."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ImmersionDegeneracyError(CartanLabError):
    """Induced metric is not uniformly positive definite."""

    def __init__(self, message, point=None, eigenvalue=None):
        super().__init__(message)
        self.point = point
        self.eigenvalue = eigenvalue


class FrameError(CartanLabError):
    """No continuous adapted frame could be built from the sample."""
