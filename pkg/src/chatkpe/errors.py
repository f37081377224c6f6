"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ChatKpeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ChatKpeError):
    """Invalid configuration or argument values."""


class DataError(ChatKpeError):
    """Malformed or inconsistent input data (corpus files, vocab files,
    embedding dumps, checkpoints)."""


class NumericError(ChatKpeError):
    """Non-finite values or numeric divergence during training."""
