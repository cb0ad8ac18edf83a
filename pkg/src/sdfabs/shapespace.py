"""Linear latent shape model over signed distance volumes.

A shape space is a mean volume plus N orthonormal basis volumes with
per-dimension whitening scales.  Decoding is affine,

    decode(z) = mean + sum_i z_i * scales_i * basis_i,

so ``decode(0)`` is the mean shape and the adjoint (``decode_vjp``) is a
single matrix product.  Fitting is a principal component analysis of the
training volumes; scales are chosen so training codes come out unit-variance,
which makes the standard-normal prior a sensible sampling distribution.

Decoded volumes are generally not exact distance fields (linear combinations
break the eikonal property); the renderer's conservative step factor absorbs
that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientData, ResolutionMismatch
from .volume import SdfVolume

_MIN_SCALE = 1e-12


@dataclass(frozen=True)
class NearSurfaceWeighting:
    """Up-weight voxels whose mean distance is within ``delta`` of zero."""

    delta: float = 0.05
    weight: float = 4.0


@dataclass(frozen=True)
class ShapeSpace:
    """Mean volume, orthonormal basis rows, and whitening scales.

    mean: (R**3,) flattened in C order of values[ix, iy, iz].
    basis: (N, R**3), rows mutually orthonormal.
    scales: (N,) positive whitening factors.
    """

    resolution: int
    mean: np.ndarray
    basis: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        mean = np.ascontiguousarray(self.mean, dtype=np.float64).reshape(-1)
        basis = np.ascontiguousarray(self.basis, dtype=np.float64)
        scales = np.ascontiguousarray(self.scales, dtype=np.float64)
        r = self.resolution
        if mean.size != r**3 or basis.shape != (scales.size, r**3):
            raise DimensionMismatch("mean/basis/scales sizes are inconsistent")
        for name, arr in (("mean", mean), ("basis", basis), ("scales", scales)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def latent_dim(self) -> int:
        return self.scales.size

    def _check_z(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.size != self.latent_dim:
            raise DimensionMismatch(f"latent size {z.size} != {self.latent_dim}")
        return z


def _as_rows(volumes: list[SdfVolume]) -> tuple[int, np.ndarray]:
    res = volumes[0].resolution
    for v in volumes:
        if v.resolution != res:
            raise ResolutionMismatch("all volumes must share one resolution")
    x = np.stack([v.values.ravel() for v in volumes]).astype(np.float64)
    return res, x


def fit(
    volumes: list[SdfVolume],
    latent_dim: int,
    near_surface_weighting: NearSurfaceWeighting | None = None,
) -> ShapeSpace:
    """Fit a shape space to training volumes by (optionally weighted) PCA.

    With weighting, voxels in the near-surface band of the mean volume are
    scaled by sqrt(weight) before the decomposition; the stored basis is the
    orthonormalized back-projection into unweighted voxel space.  The result
    is deterministic: each basis row's sign is fixed so its largest-magnitude
    entry is positive.
    """
    if len(volumes) < latent_dim + 1:
        raise InsufficientData(f"need >= {latent_dim + 1} volumes, got {len(volumes)}")
    res, x = _as_rows(volumes)
    mean = x.mean(axis=0)
    centered = x - mean

    if near_surface_weighting is None:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        basis = vt[:latent_dim]
    else:
        w = np.where(
            np.abs(mean) < near_surface_weighting.delta,
            np.sqrt(near_surface_weighting.weight),
            1.0,
        )
        _, _, vt = np.linalg.svd(centered * w, full_matrices=False)
        back = (vt[:latent_dim] / w).T
        q, _ = np.linalg.qr(back)
        basis = q.T

    flip = np.where(basis[np.arange(latent_dim), np.abs(basis).argmax(axis=1)] < 0, -1.0, 1.0)
    basis = basis * flip[:, None]

    projections = centered @ basis.T
    scales = np.maximum(projections.std(axis=0, ddof=1), _MIN_SCALE)
    return ShapeSpace(resolution=res, mean=mean, basis=basis, scales=scales)


def decode(space: ShapeSpace, z: np.ndarray) -> SdfVolume:
    """Latent code to volume."""
    z = space._check_z(z)
    flat = space.mean + (z * space.scales) @ space.basis
    r = space.resolution
    return SdfVolume(flat.reshape((r, r, r)))


def decode_vjp(space: ShapeSpace, cotangent: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`decode`: flat voxel cotangent to latent."""
    cot = np.asarray(cotangent, dtype=np.float64).reshape(-1)
    if cot.size != space.mean.size:
        raise DimensionMismatch("cotangent does not match voxel count")
    return (space.basis @ cot) * space.scales


def encode(space: ShapeSpace, vol: SdfVolume) -> np.ndarray:
    """Volume to latent code (left inverse of decode)."""
    if vol.resolution != space.resolution:
        raise ResolutionMismatch("volume resolution does not match space")
    flat = vol.values.ravel()
    return (space.basis @ (flat - space.mean)) / space.scales


def sample_prior(space: ShapeSpace, rng: np.random.Generator) -> np.ndarray:
    """Draw a latent code from the standard-normal prior."""
    return rng.standard_normal(space.latent_dim)
