"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array sizes do not match the shared grid or each other."""


class DomainError(ValueError):
    """A scalar argument is outside its admissible range."""


class FormatError(ValueError):
    """A file on disk does not follow the expected layout.

    ``offset`` is the byte offset (or row number for text files) where the
    problem was found, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class RankError(ValueError):
    """Normal equations are singular and no ridge term was supplied."""


class NumericalAbort(RuntimeError):
    """Optimization produced a non-finite loss; ``trace`` holds progress so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
