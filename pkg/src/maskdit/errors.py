"""Exception types raised across the package."""


class MaskDiTError(Exception):
    """Base class for all package errors."""


class ShapeError(MaskDiTError, ValueError):
    """Tensor shapes or grid geometry are inconsistent."""


class ConfigError(MaskDiTError, ValueError):
    """A configuration value or document is invalid."""


class NonFiniteLossError(MaskDiTError, FloatingPointError):
    """Training produced a NaN or inf loss.

    ``diagnostics`` holds the values needed to reproduce the failing step.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class TokenCountError(MaskDiTError, AssertionError):
    """An instrumented forward pass saw unexpected per-block token counts."""

    def __init__(self, message, counts=None):
        super().__init__(message)
        self.counts = list(counts or [])


class CheckpointError(MaskDiTError):
    """Base class for checkpoint I/O failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes, unreadable manifest, or truncated payload."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class ChecksumError(CheckpointError):
    """Payload checksum does not match the stored value."""


class CheckpointShapeError(CheckpointError, ShapeError):
    """Checkpoint tensors do not match the requested model configuration."""
