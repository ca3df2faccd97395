"""Exception types shared across the package."""


class LevelFlowError(Exception):
    """Base class for all levelflow errors."""


class DimensionMismatch(LevelFlowError):
    """Tensor shapes are incompatible for the requested operation."""


class NonFiniteValue(LevelFlowError):
    """A NaN or Inf appeared where only finite values are allowed."""


class LevelParseError(LevelFlowError):
    """A level text could not be parsed; message carries row/column."""


class ConfigError(LevelFlowError):
    """A run configuration is malformed or contains unknown fields."""


class CheckpointError(LevelFlowError):
    """A checkpoint or model file is missing, truncated, or corrupt."""


class EmptyBufferError(LevelFlowError):
    """A replay buffer operation needs entries that are not there."""


class MissingFlowHead(LevelFlowError):
    """log z0 was requested for a size that was never trained."""


class MissingPropertyError(LevelFlowError):
    """A control refers to a property the analysis did not produce."""


class TailoredGmmError(LevelFlowError):
    """A tailored condition model could not be built for the target size."""
