"""Exception types shared across the package."""


class InfoRlError(Exception):
    pass


class ConfigurationError(InfoRlError, ValueError):
    """Inconsistent shapes, unknown config keys, mismatched latent variants."""


class UsageError(InfoRlError, RuntimeError):
    """An API was called in a state it does not support."""


class NonFiniteError(InfoRlError, FloatingPointError):
    """A tensor op produced NaN or Inf."""


class EnvironmentFault(InfoRlError, ValueError):
    """An environment received an action it cannot apply."""


class NumericalAbort(InfoRlError):
    """Training hit a non-finite quantity and stopped."""

    def __init__(self, message, iteration=None, diagnostics=None):
        super().__init__(message)
        self.iteration = iteration
        self.diagnostics = diagnostics or {}


class CheckpointError(InfoRlError):
    """A checkpoint could not be read (corrupt, truncated, wrong version)."""


class UndefinedMetricError(InfoRlError, ValueError):
    """A metric is undefined for the given data (e.g. the angle of the origin)."""
