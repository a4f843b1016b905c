"""Exception types shared across the package."""


class MeanFuseError(Exception):
    """Base class for all errors raised by this package."""


class InputError(MeanFuseError, ValueError):
    """Invalid user-supplied data or options."""


class ConfigError(InputError):
    """Inconsistent solver or penalty configuration."""


class ParseError(InputError):
    """Malformed dataset or design file; message carries line numbers."""


class SingularVarianceError(MeanFuseError):
    """Marginal variance degenerate or mean non-finite at some coordinate."""


class ConvergenceError(MeanFuseError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, *, iterate=None, gradient_norm=None, iterations=None):
        super().__init__(message)
        self.iterate = iterate
        self.gradient_norm = gradient_norm
        self.iterations = iterations


class DivergenceError(MeanFuseError):
    """Non-finite iterate produced during optimization."""

    def __init__(self, message, *, iteration=None, primal=None, dual=None):
        super().__init__(message)
        self.iteration = iteration
        self.primal = primal
        self.dual = dual


class RankDeficiencyError(MeanFuseError):
    """A combination step hit a singular information matrix."""


class PathError(MeanFuseError):
    """No usable record on a tuning-parameter path."""


class StudyError(MeanFuseError):
    """Too many replicate failures in a simulation study."""
