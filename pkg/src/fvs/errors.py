"""Exception types shared across the pipeline."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class OutOfRangeError(ValueError):
    """A timestamp or index falls outside the covered span."""


class FormatError(ValueError):
    """A log/config/binary file does not match its format."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}: "
        if line is not None:
            loc += f"line {line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class BehindCameraError(ValueError):
    """A back-projected ray has non-positive depth in the target camera."""


class DegenerateInputError(ValueError):
    """An operation has no usable samples to work with."""


class DivergenceError(RuntimeError):
    """Training or optimization produced a non-finite or runaway loss."""
