"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: config -> 1, data -> 2,
numeric/divergence -> 3, checkpoint/file -> 4.
"""


class McbyolError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(McbyolError):
    """Invalid or inconsistent configuration."""


class DataError(McbyolError):
    """Malformed dataset, labels, or split request."""


class ContractError(McbyolError):
    """A documented call precondition was violated."""


class DimensionError(ContractError):
    """Shapes incompatible with the requested operation."""


class NumericError(McbyolError):
    """Non-finite values or numerically invalid input."""


class DivergenceError(NumericError):
    """A sampling chain left the stable region."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"chain diverged at step {step}")


class CheckpointError(McbyolError):
    """Checkpoint file cannot be read or written."""


class VersionError(CheckpointError):
    """Unrecognized magic bytes or unsupported format version."""


class TruncationError(CheckpointError):
    """File shorter than its declared layout."""


class ChecksumError(CheckpointError):
    """Stored CRC does not match file contents."""
