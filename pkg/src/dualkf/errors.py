"""Exception hierarchy shared by the numerical modules and the CLI."""


class DualKFError(Exception):
    """Base class for all errors raised by this package."""


class InputError(DualKFError, ValueError):
    """Malformed input: wrong shapes, non-finite entries, non-PSD covariance."""


class ParameterError(DualKFError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class InstabilityError(DualKFError, ArithmeticError):
    """A closed-loop matrix is not Schur stable.

    Callers evaluating the cost treat this as ``J = +inf``.
    """

    def __init__(self, message, rho=None):
        super().__init__(message)
        self.rho = rho


class NumericalError(DualKFError, ArithmeticError):
    """A factorization failed or a residual contract was violated."""


class ConvergenceError(DualKFError, ArithmeticError):
    """An iteration did not meet its tolerance within the iteration budget."""


class StepFailureError(DualKFError, ArithmeticError):
    """A line search rejected every candidate step."""


class ConfigError(DualKFError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
