"""Exception hierarchy shared across the package."""


class CnodeError(Exception):
    """Base class for all package errors."""


class DimensionError(CnodeError, ValueError):
    def __init__(self, what, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class ContractError(CnodeError, ValueError):
    """A documented precondition was violated by the caller."""


class PoisonedGradientError(CnodeError, FloatingPointError):
    def __init__(self, segment):
        self.segment = segment
        super().__init__(f"non-finite gradient in parameter segment {segment!r}")


class NumericalError(CnodeError, ArithmeticError):
    """Base class for failures of a numerical procedure."""


class NonConvergenceError(NumericalError):
    def __init__(self, message, stats=None):
        self.stats = stats
        super().__init__(message)


class InstabilityError(NumericalError):
    def __init__(self, s, message=None):
        self.s = s
        super().__init__(message or f"dynamics produced non-finite values at s={s!r}")


class UnsupportedMethodError(CnodeError, ValueError):
    pass


class ConfigError(CnodeError, ValueError):
    pass


class TrainingDiverged(NumericalError):
    """Raised when the loss becomes non-finite; carries the last good state."""

    def __init__(self, epoch, params, history):
        self.epoch = epoch
        self.params = params
        self.history = history
        super().__init__(f"non-finite loss at epoch {epoch}")


class TaskError(CnodeError, RuntimeError):
    pass
