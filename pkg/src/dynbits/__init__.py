"""Simulation and numerical analysis of dynamical bit sequences."""

from .errors import (
    BudgetExceededError, DomainError, DynbitsError, EmptySetError, NumericalError, QuadratureError,
)
from .timeset import TimeSet, kolmogorov_capacity, minkowski_dims

__all__ = [
    "BudgetExceededError", "DomainError", "DynbitsError", "EmptySetError", "NumericalError",
    "QuadratureError", "TimeSet", "kolmogorov_capacity", "minkowski_dims",
]
__version__ = "0.1.0"
