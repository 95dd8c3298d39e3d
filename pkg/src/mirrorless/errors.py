"""Exception types shared across the package."""


class MirrorlessError(Exception):
    """Base class for library errors."""


class DomainError(MirrorlessError, ValueError):
    """A point left the domain of a metric or potential.

    ``exit_time`` is set when the exit happened while integrating a path.
    """

    def __init__(self, message, point=None, exit_time=None):
        super().__init__(message)
        self.point = point
        self.exit_time = exit_time


class MetricError(MirrorlessError, ValueError):
    """A metric matrix is not symmetric positive definite."""


class ConvergenceError(MirrorlessError, RuntimeError):
    """An iterative solve or refinement did not converge."""


class ConfigError(MirrorlessError, ValueError):
    """Experiment config failed validation; ``errors`` lists every violation."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
