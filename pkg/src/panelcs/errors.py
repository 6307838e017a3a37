"""Exception hierarchy.

Input problems derive from :class:`InputError` and numerical failures from
:class:`NumericalError`; the command line maps them to exit codes 2 and 3.
"""


class PanelCSError(Exception):
    """Base class for all package errors."""


class InputError(PanelCSError, ValueError):
    """Malformed data or configuration."""


class NumericalError(PanelCSError, ArithmeticError):
    """A computation could not be carried out reliably."""


class MissingCell(InputError):
    pass


class DuplicateCell(InputError):
    pass


class NonFinite(InputError):
    pass


class ZeroVariance(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class DuplicateGroups(InputError):
    pass


class DomainError(InputError):
    """Argument outside the domain of a distribution function."""


class InvalidBeta(InputError):
    pass


class AssignmentViolation(InputError):
    """Estimated memberships do not minimize the unit-wise least-squares criterion."""


class CholeskyFailure(NumericalError):
    pass


class SingularMatrix(NumericalError):
    pass


class SingularOmega(NumericalError):
    pass


class BracketFailure(NumericalError):
    pass


class BelowPointMass(NumericalError):
    """Quantile requested at or below the atom of the QLR distribution at zero."""


class DegenerateMoment(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class EmptyGroup(NumericalError):
    pass
