"""Exception and warning classes.

Every error carries an ``exit_code`` used by the command-line front end:
2 for bad input, 3 for numerical failure, 4 for non-convergence.
"""


class CbopError(Exception):
    """Base class of all errors raised by the package."""

    exit_code = 3


class InputError(CbopError, ValueError):
    exit_code = 2


class NotStronglyConnected(InputError):
    pass


class NegativeCost(InputError):
    pass


class NonPositiveAffinity(InputError):
    pass


class DuplicateEdge(InputError):
    pass


class NegativeEntry(InputError):
    pass


class SumNotOne(InputError):
    pass


class EmptyGroup(InputError):
    pass


class TooLarge(InputError):
    pass


class NumericalError(CbopError, ArithmeticError):
    exit_code = 3


class NonRegularChain(NumericalError):
    pass


class IllConditionedPseudoinverse(NumericalError):
    pass


class AlphaOutOfRange(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class DivergentScaling(NumericalError):
    pass


class NumericalBreakdown(NumericalError):
    """Raised when a quantity that must be nonnegative is clearly negative."""


class Infeasible(NumericalError):
    pass


class NoConvergence(CbopError):
    exit_code = 4

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NumericalUnderflowWarning(RuntimeWarning):
    """exp(-beta * cost) underflowed to a subnormal or zero on an existing edge."""


class MarginRenormalizedWarning(UserWarning):
    pass


class ZeroCouplingWarning(RuntimeWarning):
    """A coupling entry vanished, so the corresponding distance is infinite."""
