"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so new error kinds should subclass one
of the four categories below rather than raising bare exceptions.
"""


class ImbforecastError(Exception):
    """Base class for all package errors."""


class ConfigError(ImbforecastError):
    """Invalid or inconsistent configuration."""


class DataError(ImbforecastError):
    """Schema violations, malformed CSV input, or ingestion failures."""


class TrainingError(ImbforecastError):
    """Training could not start or diverged."""


class CheckpointError(ImbforecastError):
    """Checkpoint files that cannot be read, verified, or matched to data."""
