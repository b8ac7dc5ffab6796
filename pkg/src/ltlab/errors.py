"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and NumericalError to exit code 3;
everything else is a plain bug.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad value, unknown key, or inconsistent combination."""


class NumericalError(RuntimeError):
    """Numerical failure at runtime (non-finite loss, diverging training)."""


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line or byte offset."""
