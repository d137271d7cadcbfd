"""Exception hierarchy.

Errors are grouped by how a command-line run should exit: configuration and
dataset problems exit 2, unreadable checkpoints exit 3, anything else that
goes wrong at runtime exits 1.
"""


class WarpLutError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(WarpLutError, ValueError):
    """A caller passed an argument with the wrong shape, range, or type."""


class ArityError(ValidationError):
    """Node arity outside the supported range."""


class WiringError(ValidationError):
    """A connection pattern cannot be built (e.g. fewer wires than arity)."""


class ConfigError(WarpLutError):
    """A config file or architecture document is malformed or inconsistent."""


class DataError(WarpLutError):
    """A dataset file is missing, truncated, or fails format validation."""


class CheckpointError(WarpLutError):
    """A checkpoint cannot be read back (missing, corrupt, or wrong version)."""


class TrainingDiverged(WarpLutError):
    """Loss or parameters became non-finite during training."""
