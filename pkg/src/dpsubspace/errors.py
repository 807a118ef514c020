"""Exception types raised across the package."""


class SubspaceError(Exception):
    """Base class for all errors raised by dpsubspace."""


class AllZeroInput(SubspaceError, ValueError):
    pass


class ZeroPoint(SubspaceError, ValueError):
    pass


class RankMismatch(SubspaceError, ValueError):
    pass


class DimensionMismatch(SubspaceError, ValueError):
    pass


class InvalidBudget(SubspaceError, ValueError):
    pass


class MissingNull(SubspaceError, ValueError):
    pass


class InsufficientData(SubspaceError, ValueError):
    pass


class TooManyCandidates(SubspaceError, RuntimeError):
    """Raised when exhaustive k-subset enumeration exceeds the configured cap."""


class VerificationFailed(SubspaceError, RuntimeError):
    pass


class SelfTestFailed(SubspaceError, AssertionError):
    def __init__(self, statistic, value, bound):
        self.statistic = statistic
        self.value = value
        self.bound = bound
        super().__init__(f"{statistic}={value!r} violates bound {bound!r}")


class ConfigError(SubspaceError, ValueError):
    pass


class NoFeasiblePoint(SubspaceError, RuntimeError):
    pass


class DegenerateSpectrumWarning(UserWarning):
    """The k-th and (k+1)-th singular values are numerically tied."""
