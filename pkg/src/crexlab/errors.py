"""Exception hierarchy shared across the package."""


class CrexError(Exception):
    """Base class for all errors raised by crexlab."""


class ZeroVector(CrexError, ValueError):
    pass


class DimensionMismatch(CrexError, ValueError):
    pass


class EmptyBatch(CrexError, ValueError):
    pass


class BatchTooSmall(CrexError, ValueError):
    pass


class BatchTooLarge(CrexError, ValueError):
    pass


class MissingLabels(CrexError, ValueError):
    pass


class TemperatureNonPositive(CrexError, ValueError):
    pass


class LabelOutOfRange(CrexError, ValueError):
    pass


class EmptyInput(CrexError, ValueError):
    pass


class MissingCategory(CrexError, ValueError):
    pass


class InfeasibleSpec(CrexError, ValueError):
    pass


class UnknownAxis(CrexError, ValueError):
    pass


class ConfigError(CrexError, ValueError):
    """Invalid configuration or input document; carries a location hint."""

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class DivergenceDetected(CrexError, RuntimeError):
    """Training blew up. ``trace`` holds the records logged before the abort."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
