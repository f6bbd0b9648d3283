"""Exception types shared across the toolkit.

The CLI maps any :class:`ParaprefError` to exit code 2 with a single-line
machine-parsable message; usage errors exit with code 1.
"""


class ParaprefError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ParaprefError):
    """Invalid configuration: malformed template, bad option value, etc."""


class DataFormatError(ParaprefError):
    """Malformed input data (wrong column count, bad header, broken record)."""


class NumericError(ParaprefError):
    """Numerically undefined request: zero-norm vector, non-finite input."""


class LengthError(ParaprefError):
    """Tokenized input exceeds the model's context window."""
