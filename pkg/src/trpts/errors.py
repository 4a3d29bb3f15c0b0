"""Exception types shared across the library.

The CLI maps ConfigurationError to exit code 2 and NumericError to
exit code 3; everything else is a plain failure.
"""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class InputError(ValueError):
    """A value violates an operation's precondition."""


class ConfigurationError(ValueError):
    """A configuration is inconsistent, unknown, or refers to missing pieces."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class UsageError(RuntimeError):
    """An API was called outside its contract."""
