class LaudError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(LaudError, ValueError):
    pass


class GeometryError(LaudError, ValueError):
    pass


class ConfigError(LaudError, ValueError):
    pass


class FormatError(LaudError, ValueError):
    pass


class StateError(LaudError, RuntimeError):
    pass


class DataError(LaudError, OSError):
    pass


class NumericError(LaudError, FloatingPointError):
    """Non-finite loss during training. ``diagnostics`` holds the last loss components."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
