"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes or horizons do not agree."""


class NumericDomainError(ValueError):
    """A value lies outside the domain where an operation is defined."""


class ConfigError(ValueError):
    """Invalid configuration. ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""
