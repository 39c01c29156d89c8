"""Error taxonomy for the analysis library.

InputError subclasses describe problems with the data, the design or the
requested configuration (CLI exit code 2). NumericalError subclasses
describe failures of the numerical machinery on otherwise valid input
(CLI exit code 3).
"""


class FactorLabError(Exception):
    """Base exception for the analysis library."""

    exit_code = 1


class InputError(FactorLabError):
    """Raised when user-supplied data, design or options are invalid."""

    exit_code = 2


class NumericalError(FactorLabError):
    """Raised when a numerical procedure cannot produce a valid result."""

    exit_code = 3


# Input problems


class InvalidLevel(InputError):
    """A level assignment lies outside 1..n_levels of its factor."""


class InvalidDesign(InputError):
    """The design or model formula violates a structural rule."""


class InsufficientReplication(InputError):
    """The model leaves fewer than one residual degree of freedom."""


class MissingDataPresent(InputError):
    """An operation that needs complete data received missing entries."""


class EmptyColumn(InputError):
    """A response column has too few observed values."""


class EmptyCell(InputError):
    """A design cell has no observed value for a response."""

    def __init__(self, message, cell=None, response=None):
        super().__init__(message)
        self.cell = cell
        self.response = response


class DegenerateGroup(InputError):
    """A compared group has no usable observations."""


class InfeasibleFraction(InputError):
    """The requested missing fraction cannot respect the retention constraint."""


class NonPositiveInput(InputError):
    """Box-Cox received values that are not strictly positive."""


class TooFewObservations(InputError):
    """Not enough observations for the requested procedure."""


class InvalidP(InputError):
    """A p-value outside (0, 1] was supplied."""


class DomainError(InputError):
    """Arguments outside the domain of a special function."""


class NotSymmetric(InputError):
    """A matrix expected to be symmetric is not."""


class InvalidConfig(InputError):
    """Incompatible or out-of-range configuration values."""


class DataFormatError(InputError):
    """An input file is missing, unreadable or malformed."""


# Numerical failures


class RankDeficient(NumericalError):
    """A least-squares system does not have full column rank."""


class RankTooLow(NumericalError):
    """A PCA model cannot support the requested number of components."""


class ZeroVariance(NumericalError):
    """A column or pooled sample has zero variance."""


class ZeroResidualVariance(NumericalError):
    """The residual sum of squares of a fit is zero."""


class NonConvergence(NumericalError):
    """An iterative procedure stopped at max_iter without converging."""


class InfeasibleMask(NumericalError):
    """pCMR could not find a permutation leaving every cell observed."""


class DegenerateQ(NumericalError):
    """Training Q statistics have zero variance."""


class DegenerateInput(NumericalError):
    """All observed values are equal."""
