"""Exception types shared across the package."""


class AvclError(Exception):
    """Base class for all package errors."""


class DimensionError(AvclError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(AvclError):
    """Input value outside the mathematical domain of an operation."""


class ContractError(AvclError):
    """An API precondition was violated (wrong rank, non-scalar loss, ...)."""


class DegenerateInputError(AvclError):
    """Input is degenerate for the operation (e.g. a zero-norm feature)."""


class SerializationError(AvclError):
    """A tensor file or checkpoint is truncated or malformed."""


class AudioDecodeError(AvclError):
    """A WAV file could not be decoded or has an unsupported layout."""


class ConfigError(AvclError):
    """Invalid or inconsistent run configuration."""


class NumericsError(AvclError):
    """Training produced a non-finite value and was aborted."""


class CheckpointError(AvclError):
    """A checkpoint is missing, corrupted, or does not match the config."""
