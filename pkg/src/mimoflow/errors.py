"""Exception classes shared across the package."""


class MimoflowError(Exception):
    """Base class for all package errors."""


class TopologyError(MimoflowError, ValueError):
    """Invalid network topology or physical-layer parameters."""


class NonConvergence(MimoflowError):
    """An iterative routine hit its iteration cap or diverged.

    ``last`` holds the last iterate and ``residual`` the last measured
    residual, so callers can inspect how far off the run was;
    ``iterations`` counts the iterations spent before giving up.
    """

    def __init__(self, message, last=None, residual=None, divergent=False,
                 iterations=0):
        super().__init__(message)
        self.last = last
        self.residual = residual
        self.divergent = divergent
        self.iterations = iterations


class EmptyQueue(MimoflowError):
    """The queue state has no active location."""


class GridTooLarge(MimoflowError):
    """The requested oracle grid exceeds the evaluation budget."""


class InfeasibleCertificate(MimoflowError, ValueError):
    """A supplied power vector does not certify the requested rates."""


class ConfigError(MimoflowError, ValueError):
    """Experiment configuration failed validation.

    ``field`` names the offending configuration entry.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class EmptyTable(MimoflowError, ValueError):
    """A sweep table with no rows was passed for export."""
