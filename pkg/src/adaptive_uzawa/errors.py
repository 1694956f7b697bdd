"""Exception hierarchy shared by every module of the package."""


class UzawaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(UzawaError, ValueError):
    """Operand shapes do not agree."""


class NotPositiveError(UzawaError, ArithmeticError):
    """An operator expected to be positive (definite) is not."""


class SingularMatrixError(UzawaError, ArithmeticError):
    """A factorization hit a zero (or structurally missing) pivot."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class DenseCapError(UzawaError):
    """A dense computation was requested above the configured size cap."""


class BreakdownError(UzawaError, ArithmeticError):
    """An iterative method cannot continue (e.g. a nonpositive denominator)."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(UzawaError, ValueError):
    """Invalid solver, problem or experiment configuration."""
