"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class DimensionError(ValueError):
    """Array shape does not match the operator or config geometry."""


class DataError(RuntimeError):
    """Dataset files missing, corrupt, or failing integrity checks."""


class TensorFormatError(DataError):
    """On-disk tensor file cannot be parsed."""


class NumericalError(RuntimeError):
    """Non-finite values encountered where the math forbids them."""
