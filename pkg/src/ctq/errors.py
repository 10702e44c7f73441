"""Exception hierarchy shared by all ctq modules."""

from __future__ import annotations


class CTQError(Exception):
    """Base class for every error raised by ctq."""


class EmptyVector(CTQError, ValueError):
    """A vector with no positive entries cannot be normalized or compared."""


class NegativeValue(CTQError, ValueError):
    pass


class DuplicateId(CTQError, ValueError):
    pass


class DimensionOutOfRange(CTQError, ValueError):
    pass


class UnknownDim(CTQError, KeyError):
    pass


class BoundIncrease(CTQError, ValueError):
    """Frontier bounds must be non-increasing over a traversal."""


class AllExhausted(CTQError):
    """No live posting list remains for a strategy to advance."""


class UnknownStrategy(CTQError, ValueError):
    pass


class InstanceTooLarge(CTQError):
    """The position lattice exceeds the brute-force oracle's guard."""


class IndexFormatError(CTQError):
    pass


class FormatVersionMismatch(IndexFormatError):
    pass


class ChecksumMismatch(IndexFormatError):
    pass
