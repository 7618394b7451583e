"""Variational-GRU session-based recommender."""

from relavar.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
    RelavarError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "NumericError",
    "RelavarError",
]
