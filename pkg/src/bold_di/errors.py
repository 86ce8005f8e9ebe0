"""Exception types shared across the toolkit."""


class BoldDiError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(BoldDiError):
    """An argument violates a documented precondition (shape, finiteness, range)."""


class NumericalFailureError(BoldDiError):
    """An iterative numerical routine failed to converge or produced non-finite results."""


class UnsupportedOpError(BoldDiError):
    """A computation used an operation the gradient engine does not register."""
