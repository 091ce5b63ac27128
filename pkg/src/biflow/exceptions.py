"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`BiflowError`
and carries a category used by the command line to pick an exit code.
"""


class BiflowError(Exception):
    exit_code = 1


class DataError(BiflowError):
    exit_code = 3


class NumericalError(BiflowError, ArithmeticError):
    exit_code = 4


class NotSymmetric(NumericalError, ValueError):
    pass


class NotPositiveDefinite(NumericalError, ValueError):
    pass


class SingularDiagonal(NumericalError, ValueError):
    pass


class BracketNotFound(NumericalError):
    pass


class DivergedLoss(NumericalError):
    pass


class InsufficientSamples(BiflowError, ValueError):
    exit_code = 3


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass
