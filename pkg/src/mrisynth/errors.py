"""Exception hierarchy shared across the package."""


class MrisynthError(Exception):
    """Base class for package-specific failures."""


class ConfigError(MrisynthError):
    """Bad, missing, or unknown configuration values."""


class DataError(MrisynthError):
    """Problems with input files, geometry, or study assembly."""


class CheckpointError(MrisynthError):
    """Unreadable, truncated, or incompatible checkpoint files."""


class NumericError(MrisynthError):
    """Non-finite values where finite numbers are required."""
