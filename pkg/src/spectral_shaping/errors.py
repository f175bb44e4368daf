"""Exception types raised across the package."""


class ShapingError(Exception):
    """Base class for all package errors."""


class ParameterError(ShapingError, ValueError):
    """Invalid user-supplied parameter."""


class ContractError(ShapingError, ValueError):
    """Shapes or arguments violate an operation's preconditions."""


class DegenerateInputError(ShapingError, ValueError):
    """Input is well-formed but mathematically degenerate."""


class CapabilityError(ShapingError, RuntimeError):
    """Requested operation is outside what this path supports."""


class NumericError(ShapingError, ArithmeticError):
    """Non-finite values encountered."""


class FormatError(ShapingError, ValueError):
    """A serialized file could not be parsed."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class ConfigError(ShapingError, ValueError):
    """Invalid run configuration."""


class LambdaMaxWarning(UserWarning):
    """Spectral upper bound could not be certified."""


class SpectrumRangeWarning(UserWarning):
    """A filter was evaluated outside its design interval."""
