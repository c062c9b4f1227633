"""Exception types shared across the package."""


class MaxSquareError(Exception):
    """Base class for all package errors."""


class ShapeError(MaxSquareError, ValueError):
    """Tensor or array shapes do not match an operation's contract."""


class DomainError(MaxSquareError, ValueError):
    """A scalar argument is outside its valid range."""


class GraphError(MaxSquareError, ValueError):
    """A computation-graph contract was violated (e.g. non-scalar backward root)."""


class ConfigError(MaxSquareError, ValueError):
    """Invalid, unknown, or missing configuration field."""


class GenerationError(MaxSquareError, ValueError):
    """A synthetic dataset spec cannot be realized (e.g. area budget exceeded)."""


class FormatError(MaxSquareError, ValueError):
    """A binary file does not conform to its documented layout.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
