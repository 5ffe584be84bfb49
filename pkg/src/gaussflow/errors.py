"""Exception hierarchy shared by all modules."""


class GaussFlowError(Exception):
    """Base class for every error raised by the package."""


class PreconditionError(GaussFlowError, ValueError):
    pass


class InvalidDescriptorError(GaussFlowError, ValueError):
    pass


class InvalidArgumentError(GaussFlowError, ValueError):
    pass


class NotUniformlyConvexError(GaussFlowError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NumericalFailureError(GaussFlowError):
    pass


class ConvexityLossError(NumericalFailureError):
    """Discrete Hessian lost positive definiteness at a grid cell."""

    def __init__(self, message, idx=None):
        super().__init__(message)
        self.idx = idx


class ConvexityFailureError(NumericalFailureError):
    """Step retries were exhausted without restoring convexity."""

    def __init__(self, message, t=None, idx=None):
        super().__init__(message)
        self.t = t
        self.idx = idx


class HypothesisViolationError(GaussFlowError, ValueError):
    pass


class DegenerateWindowError(GaussFlowError):
    pass


class ExtinctError(GaussFlowError):
    def __init__(self, message, t_star):
        super().__init__(message)
        self.t_star = t_star


class NotEnclosedError(GaussFlowError):
    pass


class DomainError(GaussFlowError, ValueError):
    pass


class ConfigError(GaussFlowError):
    pass
