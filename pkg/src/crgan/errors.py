class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class DegenerateStatisticsError(ValueError):
    """Batch statistics cannot be estimated from a single sample."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""


class CheckpointFormatError(ValueError):
    """A checkpoint file is corrupt, truncated, or incompatible."""


class ConfigError(ValueError):
    """A configuration key is unknown, mistyped, or out of range."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
