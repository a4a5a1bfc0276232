"""Exception hierarchy shared across the package."""


class DoubleConvError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DoubleConvError, ValueError):
    """Tensor shape or extent is invalid for the requested operation."""


class InvalidSpecError(DoubleConvError, ValueError):
    """A double-convolution spec violates its invariants."""


class VariantError(InvalidSpecError):
    """Operation requires a specific double-conv variant (e.g. s == 1)."""


class DegenerateFilterError(DoubleConvError, ValueError):
    """A filter with zero norm cannot be correlated."""


class ParseError(DoubleConvError, ValueError):
    """Layer-notation text could not be parsed.

    Carries optional line/column positions (1-based) for diagnostics.
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        prefix = ""
        if line is not None:
            prefix += f"line {line}"
        if column is not None:
            prefix += (", " if prefix else "") + f"col {column}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class FormatError(DoubleConvError, ValueError):
    """A binary or text artifact does not match its declared format."""


class ParameterError(DoubleConvError, ValueError):
    """A scalar argument (rate, learning rate, epsilon, ...) is out of range."""


class ConfigError(DoubleConvError, ValueError):
    """A training/run configuration is invalid."""


class StateError(DoubleConvError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NumericError(DoubleConvError, ArithmeticError):
    """A computation produced non-finite values."""
