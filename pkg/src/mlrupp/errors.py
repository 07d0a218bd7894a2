"""Exception types shared across the package."""


class MlruppError(Exception):
    """Base class for all package errors."""


class ShapeError(MlruppError, ValueError):
    pass


class UnsupportedError(MlruppError, ValueError):
    pass


class FormatError(MlruppError, ValueError):
    """Fixture or checkpoint file is malformed."""


class DegenerateStatsError(MlruppError, ValueError):
    """Batch norm in train mode saw fewer than two values per channel."""


class BindingError(MlruppError, KeyError):
    """A cost formula was evaluated with an unbound symbol."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(MlruppError, ValueError):
    pass


class GenerationError(MlruppError, ValueError):
    pass


class UndefinedMetricError(MlruppError, ValueError):
    """Metric has no value for the given masks (e.g. HD95 on an empty mask)."""


class InputError(MlruppError, ValueError):
    pass
