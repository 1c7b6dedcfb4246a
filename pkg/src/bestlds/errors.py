"""Exception types shared across the package."""


class BestLDSError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(BestLDSError):
    """A system parameter set is malformed (shapes, symmetry, definiteness)."""


class StabilityError(ParameterError):
    """An operation required a strictly stable dynamics matrix and did not get one."""


class ConfigError(BestLDSError):
    """An estimation or simulation configuration is unusable as given."""


class DegenerateChannelError(BestLDSError):
    """A binary channel is too saturated for moment conversion to be meaningful.

    Carries the offending channel index so callers can report or drop it.
    """

    def __init__(self, channel: int, message: str):
        super().__init__(message)
        self.channel = channel


class NumericalError(BestLDSError):
    """A numerical routine left its domain of validity (indefinite matrix, overflow)."""


class ConvergenceError(BestLDSError):
    """An iterative solver stopped without meeting its tolerance."""

    def __init__(self, message: str, grad_norm: float | None = None):
        super().__init__(message)
        self.grad_norm = grad_norm
