"""Exception hierarchy shared by all modules."""


class BurgersGalerkinError(Exception):
    """Base class for package errors."""


class ValidationError(BurgersGalerkinError, ValueError):
    """Input parameters violate a documented precondition."""


class AccuracyError(BurgersGalerkinError, ArithmeticError):
    """A quadrature or iterative estimate did not reach its tolerance."""


class CapacityError(BurgersGalerkinError, OverflowError):
    """Coefficient growth exceeded the configured arithmetic capacity."""


class NumericalError(BurgersGalerkinError, ArithmeticError):
    """A linear solve or time integration failed numerically."""


class RunError(BurgersGalerkinError, RuntimeError):
    """A simulation run produced no usable output."""
