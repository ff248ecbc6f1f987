"""Exception hierarchy shared by the library and the CLI."""


class DmorphError(Exception):
    """Base class for all package errors."""


class PropagationError(DmorphError):
    """Raised when a field cannot be propagated or yields an unphysical result."""


class DegenerateFieldError(DmorphError):
    """Raised when a field parametrization has no nonzero component."""


class FlowStall(DmorphError):
    """The gradient norm fell below the stall floor before the target was reached."""

    def __init__(self, message, probability, s):
        super().__init__(message)
        self.probability = probability
        self.s = s


class StepBudgetExceeded(DmorphError):
    """The flow used its full step budget without reaching the target."""

    def __init__(self, message, probability, s):
        super().__init__(message)
        self.probability = probability
        self.s = s


class DegenerateTrajectory(DmorphError):
    """Trajectory endpoints coincide, so the path-length ratio is undefined."""


class ConfigError(DmorphError):
    """Invalid or unparsable configuration.  ``key`` and ``line`` locate the problem."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
