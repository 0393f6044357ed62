"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Everything raised on purpose derives from AdamixtError.
"""


class AdamixtError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AdamixtError):
    """Invalid or inconsistent configuration (bad key, bad value, bad combination)."""


class DataError(AdamixtError):
    """Dataset ingestion or windowing failure (missing file, bad cell, empty split)."""


class NumericError(AdamixtError):
    """Non-finite values where finite ones are required (NaN loss, NaN gradient)."""


class ShapeError(AdamixtError, ValueError):
    """Tensor shape disagreement in a kernel or layer."""


class ContractError(AdamixtError, ValueError):
    """API misuse: a documented precondition was violated by the caller."""


class CheckpointError(DataError):
    """Base class for checkpoint file problems."""


class CheckpointFormatError(CheckpointError):
    """Bad magic, bad CRC, or a structurally invalid checkpoint file."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version not supported by this build."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ends before its declared contents."""


class CheckpointShapeError(CheckpointError):
    """Tensor in a checkpoint does not match the shape the config implies."""
