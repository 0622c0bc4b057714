"""Exception types shared across the package."""


class PrefdnError(Exception):
    """Base class for all package-specific errors."""


class FormatError(PrefdnError, ValueError):
    """Malformed or unsupported image file content."""


class ShapeError(PrefdnError, ValueError):
    """Operands have incompatible dimensions."""


class ParameterRangeError(PrefdnError, ValueError):
    """A trainable parameter lies outside its permitted bounds."""


class MissingDataError(PrefdnError, KeyError):
    """A referenced frame, scenario, or record cannot be resolved."""


class ProtocolError(PrefdnError, ValueError):
    """An operation violates the study protocol (e.g. loss-variant mismatch)."""


class NumericError(PrefdnError, ArithmeticError):
    """A numeric computation produced non-finite values."""


class InputError(PrefdnError, ValueError):
    """Invalid top-level input (empty image set, bad config values, ...)."""
