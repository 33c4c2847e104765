"""Exception hierarchy.

The CLI maps ``ConfigError`` to exit status 2 and every other
``LabError`` to exit status 3.
"""


class LabError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(LabError, ValueError):
    """Invalid scenario configuration."""


class PreconditionError(LabError, ValueError):
    """An operation was called outside its documented domain."""


class InsufficientSampleError(PreconditionError):
    """Too few paths / samples for a statistical estimate."""


class OffGridError(PreconditionError):
    """A query point falls outside the computational grid."""


class NumericalError(LabError, RuntimeError):
    """A numerical procedure failed."""


class BlowUpError(NumericalError):
    pass


class StabilityError(NumericalError):
    """Explicit time step violates a stability bound."""


class PositivityError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass
