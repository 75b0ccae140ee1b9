"""Exception hierarchy shared across the package."""


class BoraError(Exception):
    """Base class for every error raised by boragp."""


class NonFinite(BoraError, ValueError):
    pass


class InvalidRing(BoraError, ValueError):
    pass


class WktError(BoraError, ValueError):
    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class EmptyNeighborInfo(BoraError, ValueError):
    pass


class LocationInBarrier(BoraError, ValueError):
    pass


class InvalidPermutation(BoraError, ValueError):
    pass


class OrderingError(BoraError, ValueError):
    """The first m+1 reference locations are not mutually visible."""


class IsolatedUnreachable(BoraError, RuntimeError):
    pass


class NoReachableNeighbor(BoraError, RuntimeError):
    pass


class NegativeDistance(BoraError, ValueError):
    pass


class InvalidSpec(BoraError, ValueError):
    pass


class SingularNeighborGram(BoraError, RuntimeError):
    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message)


class DimensionMismatch(BoraError, ValueError):
    pass


class NonFiniteLikelihood(BoraError, FloatingPointError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)


class MissingCovariates(BoraError, ValueError):
    pass


class LengthMismatch(BoraError, ValueError):
    pass


class EmptyEvaluation(BoraError, ValueError):
    pass


class TooFewPoints(BoraError, ValueError):
    pass


class DegenerateBins(BoraError, ValueError):
    pass
