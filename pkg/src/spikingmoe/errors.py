"""Exception hierarchy shared by every spikingmoe module."""


class SpikeMoeError(Exception):
    """Base class for all package errors."""


class DimensionError(SpikeMoeError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(SpikeMoeError, ValueError):
    """A documented precondition was violated."""


class NumericError(SpikeMoeError, FloatingPointError):
    """Non-finite values where finite ones are required."""


class FormatError(SpikeMoeError, ValueError):
    """A file does not match its declared on-disk layout."""


class ShapeError(FormatError):
    """A stored tensor does not match the shape the configuration expects."""

    def __init__(self, name: str, expected, found):
        self.name = name
        self.expected = tuple(expected)
        self.found = tuple(found)
        super().__init__(f"tensor {name!r}: expected shape {self.expected}, found {self.found}")
