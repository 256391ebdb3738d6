"""Exception types raised across the library."""


class BVFlowError(Exception):
    """Base class for all library errors."""


class DomainError(BVFlowError):
    """A point, interval or path leaves the admissible domain."""


class ShapeError(BVFlowError):
    """Incompatible value shapes."""


class ToleranceError(BVFlowError):
    """Quadrature or iteration failed to reach the requested tolerance.

    Carries the best achieved estimate so callers can still inspect it.
    """

    def __init__(self, message, estimate=None, achieved_tol=None):
        super().__init__(message)
        self.estimate = estimate
        self.achieved_tol = achieved_tol


class UnsupportedCombinationError(BVFlowError):
    """Two measure components whose mutual singularity is undeclared."""


class GluingError(BVFlowError):
    """Adjacent pieces do not match at the common endpoint."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class SmallnessError(BVFlowError):
    """A contraction precondition failed; subdivide the driver first."""


class EscapeError(BVFlowError):
    """The solution left every admissible ball before the interval end."""

    def __init__(self, message, exit_time=None):
        super().__init__(message)
        self.exit_time = exit_time


class RelatednessError(BVFlowError):
    """The relatedness identity between two vector fields fails."""

    def __init__(self, message, worst_sample=None):
        super().__init__(message)
        self.worst_sample = worst_sample


class ChartError(BVFlowError):
    """A matrix is outside the chart radius, or no chart covers a state."""


class ConditioningError(BVFlowError):
    """A linear map is numerically singular (e.g. dexp near resonance)."""


class InversionError(BVFlowError):
    """A path value is numerically singular and cannot be inverted."""


class SpecError(BVFlowError):
    """Malformed JSON input; message carries the location."""
