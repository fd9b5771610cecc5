"""Exception hierarchy shared by all modules."""


class DynbitsError(Exception):
    """Base class for library errors."""


class DomainError(DynbitsError, ValueError):
    """An argument lies outside the domain of the operation."""


class EmptySetError(DomainError):
    """Operation requires a nonempty set."""


class NumericalError(DynbitsError, ArithmeticError):
    """A numerical routine failed to reach its stated tolerance."""


class QuadratureError(NumericalError):
    pass


class BudgetExceededError(DynbitsError):
    """A simulation would exceed its event or bit budget."""
