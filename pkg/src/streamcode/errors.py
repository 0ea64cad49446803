"""Shared exception types for the streamcode package."""

from __future__ import annotations


class StreamcodeError(Exception):
    """Base class for errors raised by this package."""


class InvalidInput(StreamcodeError, ValueError):
    """A caller supplied parameters outside the documented domain."""


class InvariantViolation(StreamcodeError):
    """An internal consistency check failed; indicates a bug or a broken stream."""


class PatternViolation(InvalidInput):
    """An erasure pattern does not satisfy the guard-spacing contract."""


class DecodeFailure(StreamcodeError):
    """The receiver could not uniquely solve for the source bits."""


class ImpossibleBin(StreamcodeError):
    """No candidate sequence is consistent with a received bin index."""
