"""Exception types raised by the package."""


class SLError(Exception):
    """Base class for all errors raised here."""


class InvalidInput(SLError, ValueError):
    """Malformed argument: wrong shape, non-finite entries, bad parameter."""


class NotPSD(SLError, ValueError):
    """A matrix that must be positive semidefinite is not."""


class Unsupported(SLError, ValueError):
    """The inputs are valid but outside what the routine handles."""


class NumericalBlowup(SLError, FloatingPointError):
    """A simulation step produced non-finite or runaway log-weights."""

    def __init__(self, message, t=None, control_norm=None, measure_index=None,
                 trajectory_index=None):
        super().__init__(message)
        self.t = t
        self.control_norm = control_norm
        self.measure_index = measure_index
        self.trajectory_index = trajectory_index
