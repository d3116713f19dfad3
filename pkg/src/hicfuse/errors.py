"""Exception hierarchy shared across the package.

Validation/config/parse errors indicate bad inputs (CLI exit code 1);
convergence and numeric errors indicate runtime failures (exit code 2).
"""


class HicfuseError(Exception):
    """Base class for all package errors."""


class ValidationError(HicfuseError):
    """An input value violates a documented precondition or invariant."""


class ParseError(HicfuseError):
    """A file could not be parsed; message carries the offending line number."""


class ConfigError(HicfuseError):
    """A configuration document is missing keys or internally inconsistent."""


class ConvergenceError(HicfuseError):
    """An iterative solver ran out of iterations."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NumericError(HicfuseError):
    """A non-finite value was produced where finiteness is guaranteed."""


class SamplingError(HicfuseError):
    """A rejection sampler exhausted its retry budget."""


class MetricUndefinedError(HicfuseError):
    """A metric is undefined for the given inputs (e.g. single-class AUROC)."""
