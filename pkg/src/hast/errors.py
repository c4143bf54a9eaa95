"""Exception hierarchy shared by the library, the CLI, and the HTTP service.

The CLI maps these onto exit codes (usage/config -> 2, data/parse -> 3,
numerical -> 4); the service maps them onto HTTP status codes.
"""


class HastError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(HastError):
    """An operation was called in a way its contract forbids."""


class ConfigError(UsageError):
    """Configuration values are inconsistent or do not match the model."""


class DimensionError(UsageError):
    """Tensor shapes do not conform to the requested operation."""


class DataError(HastError):
    """Input data is missing or malformed (parse failures, bad token ids)."""


class NumericalError(HastError):
    """A computation produced non-finite values."""
