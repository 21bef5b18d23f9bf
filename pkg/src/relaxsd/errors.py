"""Exception types shared across the package."""


class RelaxSDError(Exception):
    """Base class for all package errors."""


class NormalizationError(RelaxSDError, ValueError):
    pass


class IncompleteTableError(RelaxSDError, ValueError):
    pass


class DepthExceeded(RelaxSDError, ValueError):
    pass


class VocabMismatch(RelaxSDError, ValueError):
    pass


class DegenerateResidual(RelaxSDError, ArithmeticError):
    """The positive part of a residual vanished, so it cannot be normalized."""


class SlopeTooSteep(RelaxSDError, ValueError):
    pass


class DomainMismatch(RelaxSDError, ValueError):
    pass


class PremiseViolated(RelaxSDError, ValueError):
    """An acceptance row falls below min{1, P/Q} where the reduced bound needs it."""


class DominanceViolated(RelaxSDError, ValueError):
    pass


class VocabTooLarge(RelaxSDError, ValueError):
    pass


class ClampViolation(RelaxSDError, ValueError):
    pass


class ExpectationMismatch(RelaxSDError, ArithmeticError):
    pass


class ConfigError(RelaxSDError, ValueError):
    pass
