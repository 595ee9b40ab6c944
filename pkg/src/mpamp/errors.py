"""Exception types shared across the package."""


class MpampError(Exception):
    """Base class for package errors."""


class ConfigError(MpampError, ValueError):
    """Invalid configuration or arguments."""


class InfeasibleError(MpampError, RuntimeError):
    """The requested target cannot be met within the given search space."""


class NumericalError(MpampError, RuntimeError):
    """A numerical routine failed to reach its accuracy target."""


class RangeError(MpampError, ValueError):
    """Query outside the tabulated range of a model."""
