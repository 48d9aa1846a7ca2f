"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent run or sampling configuration (horizon mismatch, N < H, ...)."""


class ValidationError(ValueError):
    """An input object violates its structural invariants."""

    def __init__(self, message, offending=None):
        super().__init__(message)
        self.offending = list(offending or [])


class NumericalError(ArithmeticError):
    """A linear-algebra routine met a matrix it cannot handle."""


class SingularMatrixError(NumericalError):
    pass


class SizeGuardError(RuntimeError):
    """Exhaustive enumeration requested over too large a space."""
