"""Exception types shared across the package."""


class PairpathError(Exception):
    """Base class for all errors raised by pairpath."""


class NotSymmetricError(PairpathError, ValueError):
    pass


class NotPositiveDefiniteError(PairpathError, ValueError):
    pass


class DimensionMismatchError(PairpathError, ValueError):
    pass


class NotNormalizableError(PairpathError, ValueError):
    pass


class NonFiniteValueError(PairpathError, ArithmeticError):
    pass


class UnboundedPotentialError(PairpathError, ValueError):
    pass


class CertificationFailedError(PairpathError):
    pass


class AlphaTooSmallError(PairpathError, ValueError):
    pass


class NonFiniteEnergyError(NonFiniteValueError):
    pass


class AdaptationFailedError(PairpathError, RuntimeError):
    pass


class NonConvergenceError(PairpathError, RuntimeError):
    pass


class UncertifiedFunctionError(PairpathError, ValueError):
    pass


class DegenerateWeightsError(PairpathError, RuntimeError):
    pass


class SetTooSmallError(PairpathError, ValueError):
    pass


class DominationFailedError(PairpathError, ValueError):
    pass


class ConfigInvalidError(PairpathError, ValueError):
    pass
