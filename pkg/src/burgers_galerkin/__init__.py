"""Spectral Galerkin toolkit for Burgers-type SPDEs with Gaussian invariant measure."""

from .errors import (
    AccuracyError,
    BurgersGalerkinError,
    CapacityError,
    NumericalError,
    RunError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyError",
    "BurgersGalerkinError",
    "CapacityError",
    "NumericalError",
    "RunError",
    "ValidationError",
    "__version__",
]
