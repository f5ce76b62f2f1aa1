"""Exception types shared across the package."""


class QPatchError(Exception):
    """Base class for every error raised by qpatch."""


class ConfigurationError(QPatchError, ValueError):
    """A model, circuit or experiment was configured with invalid values."""


class UsageError(QPatchError, ValueError):
    """A function was called with arguments that violate its preconditions."""


class FormatError(QPatchError):
    """A file on disk does not match the expected binary or text layout."""


class UndefinedMetricError(QPatchError, ArithmeticError):
    """A metric has no defined value for the given inputs."""


class TrainingError(QPatchError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
