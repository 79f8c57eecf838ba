"""Exception types shared across the package."""


class GpsensError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GpsensError):
    """Invalid argument or domain violation (bad shapes, nonpositive hyperparameters, ...)."""


class NumericalError(GpsensError):
    """Linear-algebra failure that survived the jitter policy, or a transform that cannot converge."""


class FitError(GpsensError):
    """Every restart of a hyperparameter fit failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class OptimizationError(GpsensError):
    """Every restart of a perturbation search diverged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class UnsupportedError(GpsensError):
    """Operation outside the supported problem class (e.g. multi-dimensional spectral work)."""


class ConfigError(GpsensError):
    """Malformed run configuration."""


class DataError(GpsensError):
    """Malformed or unusable input data."""
