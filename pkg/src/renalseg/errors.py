"""Shared exception types."""


class RenalsegError(Exception):
    """Base class for all toolkit errors."""


class FormatError(RenalsegError):
    """Malformed .vol3/.lab3/checkpoint payload. Carries the byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BoundsError(RenalsegError):
    """Index or box out of range."""


class DegenerateInputError(RenalsegError):
    """Input lacks the variation required by the operation."""


class LocalizationError(RenalsegError):
    """No kidney candidate could be detected."""


class ShapeError(RenalsegError):
    """Tensor shape mismatch, names the op and the offending dims."""


class PhantomSpecError(RenalsegError):
    """Phantom geometry cannot be realized inside the grid."""
