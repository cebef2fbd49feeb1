"""Exception types raised across the package."""


class MAIterateError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class ValidationError(MAIterateError):
    """Input rejected before any numerical work starts."""


class DegenerateBody(ValidationError):
    pass


class BarycenterNotAtOrigin(ValidationError):
    def __init__(self, barycenter):
        self.barycenter = barycenter
        super().__init__(f"BarycenterNotAtOrigin: barycenter {list(map(float, barycenter))}")


class OriginNotInterior(ValidationError):
    pass


class ErosionEmpty(ValidationError):
    pass


class UnsupportedDimension(ValidationError):
    pass


class NonIntegralVertex(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class DivisionByZero(ValidationError):
    pass


class HypothesisViolated(ValidationError):
    def __init__(self, message, sample=None):
        self.sample = sample
        super().__init__(message)


class WrongProfile(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class PreconditionViolated(ValidationError):
    pass


class InactiveSite(MAIterateError):
    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"InactiveSite: {len(self.indices)} site(s) never touch the graph, first {self.indices[:5]}")


class PositivityLost(MAIterateError):
    pass


class Unbounded(MAIterateError):
    pass


class BoundViolated(MAIterateError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class NoConvergence(MAIterateError):
    def __init__(self, message, state=None):
        self.state = state
        super().__init__(message)


class EmptyCellPersistent(MAIterateError):
    def __init__(self, message, state=None):
        self.state = state
        super().__init__(message)


class NonPositivePotential(MAIterateError):
    pass


class MonotonicityViolated(MAIterateError):
    def __init__(self, message, gaps=None, trace=None):
        self.gaps = gaps
        self.trace = trace
        super().__init__(message)


class InequalityViolated(MAIterateError):
    pass


class TailTooHeavy(MAIterateError):
    pass


class NonconvexSample(MAIterateError):
    pass


class ShootingFailed(MAIterateError):
    pass
