"""Exception types shared across the package."""


class ForgeError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(ForgeError):
    """Malformed volume file; the message names the offending header field."""


class UnsupportedFormatError(FormatError):
    """Structurally valid file using a feature outside the supported subset."""


class DimensionError(ForgeError):
    """Operands have incompatible or unusable shapes."""


class ParameterError(ForgeError):
    """A parameter is outside its documented range."""


class DegenerateInputError(ForgeError):
    """Input is empty or constant where the operation needs variation."""


class InvariantError(ForgeError):
    """A declared data invariant (probability range, non-negativity) is violated."""


class ConfigError(ForgeError):
    """Invalid or unknown configuration content."""


class NumericalInstabilityError(ForgeError):
    """The integrator produced non-finite values."""

    def __init__(self, message: str, step: int, time: float):
        super().__init__(f"{message} (step {step}, t={time:.6g})")
        self.step = step
        self.time = time
