"""Exception types shared across the package."""


class WBaryError(Exception):
    """Base class for all package errors."""


class InvalidPoint(WBaryError, ValueError):
    pass


class CutLocus(WBaryError):
    """Raised when a log map (or anything built on it) is requested across the cut locus."""


class NoConvergence(WBaryError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class AmbiguousBarycenter(WBaryError):
    """Two restarts reached distinct minimizers with the same functional value."""

    def __init__(self, message, candidates=None):
        super().__init__(message)
        self.candidates = candidates


class SizeLimit(WBaryError):
    pass


class EmptySet(WBaryError, ValueError):
    pass


class SingularDenominator(WBaryError):
    pass


class CDViolated(WBaryError):
    pass


class Unsupported(WBaryError):
    pass


class NotApplicable(WBaryError):
    pass
