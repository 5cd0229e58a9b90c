"""Exception types shared across the package."""


class SscafError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SscafError, ValueError):
    """Invalid configuration value or config-file key."""


class InputError(SscafError, ValueError):
    """Caller-supplied data violates an operation's precondition."""


class ShapeError(SscafError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class NumericError(SscafError, ArithmeticError):
    """Non-finite values produced or consumed where finiteness is required."""


class AudioFormatError(SscafError, ValueError):
    """Malformed audio container."""


class UnsupportedAudioError(SscafError, ValueError):
    """Well-formed audio file in an encoding we do not handle."""


class ManifestError(SscafError, ValueError):
    """Dataset manifest fails validation; message names the offending row."""


class DegenerateInputError(SscafError, ValueError):
    """Input is degenerate for the operation (e.g. silent noise segment)."""


class CheckpointError(SscafError, ValueError):
    """Checkpoint container is damaged or incompatible."""
