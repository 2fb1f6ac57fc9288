"""Exception and warning types raised across the package."""


class MfarbError(Exception):
    """Base class for all package errors."""


class ConfigError(MfarbError, ValueError):
    """Invalid experiment or game configuration."""


class NumericalError(MfarbError, ArithmeticError):
    """Non-finite values or overflow during a simulation step.

    Attributes
    ----------
    step : int or None
        Time-step index at which the failure was detected.
    component : int or None
        Offending vector component, when known.
    """

    def __init__(self, message, step=None, component=None):
        super().__init__(message)
        self.step = step
        self.component = component


class SingularityError(NumericalError):
    """Diffusion matrix numerically singular or interaction at its floor."""


class DegeneracyError(NumericalError):
    """A denominator (benchmark, deflator, pole of f) fell below its guard."""


class BandViolation(DegeneracyError):
    """Value path left the band where f(U) = 1/(1 - (1-delta) U E[e^c]) is finite."""


class DivergenceError(MfarbError):
    """Picard iteration residuals grew for three consecutive iterations.

    Attributes
    ----------
    history : list of numpy.ndarray
        Value-path iterates produced before the failure.
    residuals : list of float
    """

    def __init__(self, message, history=None, residuals=None):
        super().__init__(message)
        self.history = history or []
        self.residuals = residuals or []


class UniquenessWarning(UserWarning):
    """The sufficient condition for a unique equilibrium does not hold."""
