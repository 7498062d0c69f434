"""Exception hierarchy shared by all twinbeam modules.

The CLI maps these onto exit codes: ``DomainError`` and ``TruncationError``
are validation failures (2); the numerical classes are degeneracies (4).
"""


class TwinBeamError(Exception):
    """Base class for all library errors."""


class DomainError(TwinBeamError, ValueError):
    """A parameter or input lies outside the domain of an operation."""


class TruncationError(DomainError):
    """A truncated support discards more probability mass than allowed."""

    def __init__(self, message, residual_mass):
        super().__init__(f"{message} (residual mass {residual_mass:.3e})")
        self.residual_mass = residual_mass


class NumericalError(TwinBeamError, ArithmeticError):
    """Base class for numerical failures."""


class UndefinedStatisticError(NumericalError):
    """A statistic is undefined for the given distribution (zero mean or variance)."""


class NumericalDegeneracyError(NumericalError):
    """An iteration hit a zero or underflowing denominator."""


class NumericalOverflowError(NumericalError):
    """A series term became non-finite despite log-domain guards."""
