"""Exception hierarchy shared by every massnet module."""


class MassNetError(Exception):
    """Base class for all errors raised by this package."""


class LoadError(MassNetError):
    """A dataset, frame or annotation file could not be read."""


class FormatError(MassNetError):
    """Data was readable but does not match the declared format."""


class SplitError(MassNetError, ValueError):
    pass


class ConfigError(MassNetError, ValueError):
    pass


class ShapeError(MassNetError, ValueError):
    pass


class NumericError(MassNetError):
    """Non-finite values appeared where finite ones are required."""


class CheckpointError(MassNetError):
    pass


class TrainingDiverged(MassNetError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class GenerationError(MassNetError, ValueError):
    pass


class AggregationError(MassNetError, ValueError):
    pass
