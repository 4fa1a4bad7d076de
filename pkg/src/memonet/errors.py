"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Non-finite values reached an operation that cannot handle them."""


class VocabularyError(IndexError):
    """A token id is outside the configured vocabulary."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(RuntimeError):
    """An operation was called outside its documented preconditions."""


class GenerationError(RuntimeError):
    """Procedural generation failed after its retry budget."""


class IngestionError(FileNotFoundError):
    """Dataset files are missing or malformed."""


class CheckpointError(OSError):
    """A checkpoint file is missing, truncated or has the wrong format."""
