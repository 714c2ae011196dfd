"""Exception types raised across the package."""


class PolyKDEError(Exception):
    """Base class for all package errors."""


class DataError(PolyKDEError, ValueError):
    """Invalid or degenerate input data."""


class ZeroBlock(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class RhoOutOfRange(PolyKDEError, ValueError):
    pass


class QuadratureFailure(PolyKDEError, ArithmeticError):
    pass


class UnsupportedLaw(PolyKDEError, NotImplementedError):
    pass


class UnsupportedKernel(PolyKDEError, NotImplementedError):
    pass


class EnvelopeViolation(PolyKDEError, ArithmeticError):
    pass


class SampleTooSmall(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class SingularScatter(DataError):
    pass


class NotSPD(DataError):
    pass


class KNotTwo(DataError):
    pass


class AllNegInfinity(PolyKDEError, ArithmeticError):
    pass


class NoConvergence(PolyKDEError, ArithmeticError):
    """Raised when an iterative solver exhausts its budget.

    ``fallback`` carries the best available answer.
    """

    def __init__(self, msg, fallback=None):
        super().__init__(msg)
        self.fallback = fallback
