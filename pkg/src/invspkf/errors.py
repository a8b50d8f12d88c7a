"""Exception hierarchy.

Numerical failures derive from :class:`NumericalError` (CLI exit code 3),
configuration problems from :class:`ConfigError` (CLI exit code 2).
"""


class InvSPKFError(Exception):
    """Base class for all package errors."""


class NumericalError(InvSPKFError):
    pass


class NotSymmetric(NumericalError):
    pass


class NotPositiveSemidefinite(NumericalError):
    pass


class DidNotConverge(NumericalError):
    pass


class NonFiniteOutput(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class SingularInnovation(NumericalError):
    pass


class SingularQ(NumericalError):
    pass


class PointBudgetExceeded(NumericalError):
    pass


class DegenerateSpread(NumericalError):
    pass


class ConfigError(InvSPKFError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
