"""Exception types raised across the package."""


class ScanRegError(Exception):
    """Base class for all errors raised by scanreg."""


class DegenerateConfiguration(ScanRegError):
    """Too few or collinear correspondences to fix a rigid transform."""


class EmptyCloud(ScanRegError):
    pass


class TooFewPoints(ScanRegError):
    pass


class SparseNeighborhood(ScanRegError):
    """Fewer than four points fall inside a support radius."""


class DegeneratePoint(ScanRegError):
    """Every support radius around a point is sparse."""


class NullDescriptor(ScanRegError):
    pass


class EmptySubset(ScanRegError):
    pass


class NoValidDescriptors(ScanRegError):
    pass


class NoAlignment(ScanRegError):
    """No seed match survived consensus; the pair cannot be aligned."""


class InvalidOverlap(ScanRegError):
    pass


class LengthMismatch(ScanRegError):
    pass


class ParseError(ScanRegError):
    pass


class UnsupportedFormat(ScanRegError):
    pass


class ConfigError(ScanRegError):
    pass


class DegenerateNormalSum(ScanRegError):
    """Two matched normals cancel after sign alignment."""


class IoError(ScanRegError):
    pass


class RegistrationStalled(ScanRegError):
    """A full pass placed no scan. ``result`` holds the partial registration."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result
