"""Exception types raised across the package."""


class SdfabsError(Exception):
    """Base class for all errors raised by this package."""


class SpecOutOfBounds(SdfabsError):
    """A shape specification does not fit the canonical baking domain."""


class NoSurface(SdfabsError):
    """A volume contains no sign change, so no surface can be extracted."""


class NotNormalized(SdfabsError):
    """A quaternion is too far from unit length."""


class IndexOutOfRange(SdfabsError):
    """A grid cell index is outside [0, cell_count)."""


class InsufficientData(SdfabsError):
    """Too few training volumes for the requested latent dimension."""


class ResolutionMismatch(SdfabsError):
    """Volumes of different resolutions were mixed."""


class DimensionMismatch(SdfabsError):
    """A latent vector does not match the shape space dimension."""


class EmptyPointSet(SdfabsError):
    """A view yields no valid back-projected points."""


class StaleHitInfo(SdfabsError):
    """Hit records do not match the volume/pose they are replayed against."""


class DegenerateConfig(SdfabsError):
    """Scene sampling repeatedly failed to produce a usable observation."""
