"""Pose, scale, and shape estimation over discretized signed distance fields."""

from .errors import (
    DegenerateConfig,
    DimensionMismatch,
    EmptyPointSet,
    IndexOutOfRange,
    InsufficientData,
    NoSurface,
    NotNormalized,
    ResolutionMismatch,
    SdfabsError,
    SpecOutOfBounds,
    StaleHitInfo,
)
from .shapes import ShapeSpec, box, cylinder, smooth_union, sphere, subtraction, torus, union
from .so3grid import OrientationGrid, cell_center, cell_index
from .volume import SdfVolume, bake, extract_surface_points, sample

__version__ = "0.1.0"

__all__ = [
    "DegenerateConfig",
    "DimensionMismatch",
    "EmptyPointSet",
    "IndexOutOfRange",
    "InsufficientData",
    "NoSurface",
    "NotNormalized",
    "OrientationGrid",
    "ResolutionMismatch",
    "SdfVolume",
    "SdfabsError",
    "ShapeSpec",
    "SpecOutOfBounds",
    "StaleHitInfo",
    "bake",
    "box",
    "cell_center",
    "cell_index",
    "cylinder",
    "extract_surface_points",
    "sample",
    "smooth_union",
    "sphere",
    "subtraction",
    "torus",
    "union",
]
