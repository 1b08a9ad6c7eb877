"""Exception hierarchy shared by all modules."""


class SegregaError(Exception):
    """Base class for every error raised by the package."""


# boundary data
class DatumError(SegregaError, ValueError):
    pass


class OverlappingSupports(DatumError):
    pass


class GapOnCircle(DatumError):
    pass


class NegativeProfile(DatumError):
    pass


class NonLipschitzProfile(DatumError):
    pass


class OddSpeciesCount(DatumError):
    pass


# numerical kernels
class NegativeDegree(SegregaError, ValueError):
    pass


class PoleOnDisk(SegregaError, ArithmeticError):
    pass


class EmptyRule(SegregaError, ValueError):
    pass


class BoundaryPoint(SegregaError, ValueError):
    """Point too close to the unit circle for Mobius recentering."""


# harmonic field
class TruncationTooSmall(UserWarning):
    """Estimated Fourier tail energy exceeds the configured tolerance."""


class NewtonDivergence(SegregaError):
    pass


class TooManyCriticalPoints(SegregaError):
    """More than s-1 zero-level critical points: at most s-1 can exist."""


# certification
class DegenerateDatum(SegregaError):
    pass


class SpeciesCountNot6(SegregaError, ValueError):
    pass


class OddMultiplicityPresent(SegregaError):
    pass


# PDE
class NonConvergence(SegregaError):
    def __init__(self, message, mu=None, result=None):
        super().__init__(message)
        self.mu = mu
        self.result = result


class NegativityViolation(SegregaError):
    pass


class EmptySchedule(SegregaError, ValueError):
    pass


# nodal geometry
class GeometryError(SegregaError):
    pass


class DisconnectedRegion(GeometryError):
    pass


class MissingRegion(GeometryError):
    pass


class UnstableMultiplicity(GeometryError):
    pass


class EulerViolation(GeometryError):
    pass


class IdentityViolation(GeometryError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


class UnclassifiableMultiset(GeometryError):
    pass


class FitFailure(GeometryError):
    pass
