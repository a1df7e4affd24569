"""Exception types shared across the pipeline."""


class SubtypeclError(Exception):
    """Base class for all package errors."""


class ConfigError(SubtypeclError):
    """Invalid configuration, hyperparameter, or CLI usage."""


class DataError(SubtypeclError):
    """Malformed or contract-violating data (shapes, values, missing files)."""


class ProviderError(SubtypeclError):
    """A text-embedding provider could not produce a vector."""


class NumericsError(SubtypeclError):
    """A numerical procedure diverged or failed.

    Carries optional context (step index, last finite trace, diagnostics)
    so callers can inspect what happened before the abort.
    """

    def __init__(self, message, *, step=None, trace=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.trace = trace
        self.diagnostics = diagnostics
