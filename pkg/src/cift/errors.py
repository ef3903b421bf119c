"""Exception taxonomy shared across the package."""


class CiftError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(CiftError, ValueError):
    """An argument violates a documented precondition."""


class CapacityError(CiftError, ValueError):
    """A sampling request exceeds what the dataset can supply."""


class DegenerateInputError(CiftError, ValueError):
    """Input data is structurally unusable (zero rows, empty classes, ...)."""


class ConvergenceError(CiftError, RuntimeError):
    """An iterative calibration failed to reach its target within bounds."""


class NumericalError(CiftError, ArithmeticError):
    """A computation produced a non-finite value."""
