"""Exception hierarchy shared by every module.

Each class carries the CLI exit code the operational shell maps it to.
"""


class PoseError(Exception):
    exit_code = 1


class ShapeError(PoseError, ValueError):
    """Raised when tensor extents are incompatible with an operation."""

    exit_code = 2


class ConfigError(PoseError, ValueError):
    """Invalid configuration value or unknown configuration key."""

    exit_code = 2


class DataError(PoseError):
    """Unreadable, corrupt or inconsistent data files (checkpoints, records)."""

    exit_code = 3


class CheckpointError(DataError):
    pass


class NumericError(PoseError, ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""

    exit_code = 4
