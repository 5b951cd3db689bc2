"""Exception hierarchy shared by every mfnet module."""

from __future__ import annotations


class MFNetError(Exception):
    """Base class for all errors raised by mfnet."""


class DimensionError(MFNetError, ValueError):
    """Tensor shapes are inconsistent with each other or with a layer."""


class ConfigurationError(MFNetError, ValueError):
    """A configuration value violates an invariant (divisibility, ranges...)."""


class ContractError(MFNetError, RuntimeError):
    """An API was called outside of its documented preconditions."""


class StructuralError(MFNetError, ValueError):
    """Two graphs/stores/checkpoints do not describe the same structure."""


class CheckpointError(MFNetError, IOError):
    """A checkpoint file is truncated, corrupt, or otherwise unreadable."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by a newer, unsupported format version."""


class ArchConfigError(ConfigurationError):
    """Architecture config text could not be parsed or holds invalid values."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 key: str | None = None):
        self.line = line
        self.column = column
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class TrainingDiverged(MFNetError, FloatingPointError):
    """The training loss became NaN or infinite."""
