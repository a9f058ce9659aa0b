"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ParseError(ValueError):
    """Architecture string could not be parsed."""


class UsageError(RuntimeError):
    """Operation called in a state or with arguments it does not support."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input (e.g. near-zero norm before normalization)."""


class IngestionError(RuntimeError):
    """Dataset files are missing, truncated, or inconsistent."""


class ConfigError(ValueError):
    """Experiment configuration is invalid."""


class NumericalError(RuntimeError):
    """Non-finite values encountered during training or evaluation."""
