"""Exception hierarchy.

Validation problems derive from :class:`ValueError` so that ordinary callers
can catch them generically; numerical failures derive from
:class:`NumericalError` so the command line can map them to their own exit
code.
"""


class ASLError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(ASLError, ValueError):
    """An input violates a documented precondition."""


class NumericalError(ASLError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy value."""


class MalformedAdjacencyError(ValidationError):
    pass


class SymmetryError(ValidationError):
    pass


class MatrixValidityError(ValidationError):
    pass


class NotPrimitiveError(ValidationError):
    """The combination matrix is reducible or periodic.

    Attributes
    ----------
    reason : str
        Either ``"reducible"`` or ``"periodic"``.
    """

    def __init__(self, reason, detail=""):
        self.reason = reason
        msg = f"combination matrix is not primitive ({reason})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DegeneratePairError(ValidationError):
    pass


class SupportViolationError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class PlanValidationError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class ModelOverflowError(NumericalError, OverflowError):
    pass


class QuadratureError(NumericalError):
    pass


class RootBracketingError(NumericalError):
    pass


class IdentifiabilityWarning(UserWarning):
    """Some wrong hypothesis has a non-positive network-average KL divergence."""
