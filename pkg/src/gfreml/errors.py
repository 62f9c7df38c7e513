"""Exception hierarchy.

Two families: ``DataError`` for bad inputs (CLI exit code 2) and
``NumericalError`` for numerical failures (CLI exit code 3).
"""


class GfremlError(Exception):
    """Base class for all package errors."""


class DataError(GfremlError, ValueError):
    pass


class NumericalError(GfremlError, ArithmeticError):
    pass


class DimensionMismatch(DataError):
    pass


class NonSymmetric(DataError):
    pass


class NotPSD(NumericalError):
    pass


class DecompositionFailure(NumericalError):
    pass


class NegativeTime(DataError):
    pass


class ZeroNormInput(DataError):
    pass


class MissingCrossOperator(DataError):
    pass


class AllCoefficientsZero(DataError):
    pass


class NoUpperBracket(NumericalError):
    pass


class ZeroInitialization(DataError):
    pass


class ZeroProjectedResponse(DataError):
    pass


class AllWeightsZero(DataError):
    pass


class IntegrationFailure(NumericalError):
    pass


class Diverged(NumericalError):
    pass
