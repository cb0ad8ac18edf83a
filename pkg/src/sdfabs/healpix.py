"""Nested HEALPix pixelization of the sphere for power-of-two side counts.

Only the two operations needed by the orientation grid are provided:
direction -> pixel and pixel -> center direction, both in the nested
numbering and vectorized over arrays.  Directions are passed as
``(z, phi)`` with ``z = cos(theta)`` to avoid trig round trips.

The sphere is divided into 12 * nside**2 equal-area pixels arranged on 12
base faces; within a face, pixels are numbered by interleaving the bits of
the face coordinates, so index prefixes are stable across refinements.
"""

from __future__ import annotations

import numpy as np

_JRLL = np.array([2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4], dtype=np.int64)
_JPLL = np.array([1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7], dtype=np.int64)


def npix(nside: int) -> int:
    return 12 * nside * nside


def _check_nside(nside: int) -> int:
    n = int(nside)
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError("nside must be a positive power of two")
    return n


def _spread_bits(v: np.ndarray) -> np.ndarray:
    """Insert a zero bit after every bit of v (16-bit inputs)."""
    v = v.astype(np.uint64)
    v = (v | (v << np.uint64(8))) & np.uint64(0x00FF00FF)
    v = (v | (v << np.uint64(4))) & np.uint64(0x0F0F0F0F)
    v = (v | (v << np.uint64(2))) & np.uint64(0x33333333)
    v = (v | (v << np.uint64(1))) & np.uint64(0x55555555)
    return v


def _compact_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x55555555)
    v = (v | (v >> np.uint64(1))) & np.uint64(0x33333333)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x0F0F0F0F)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x00FF00FF)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x0000FFFF)
    return v


def ang2pix_nest(nside: int, z: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Map directions (z = cos(theta), phi) to nested pixel indices."""
    nside = _check_nside(nside)
    order = nside.bit_length() - 1
    z = np.asarray(z, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    z, phi = np.broadcast_arrays(z, phi)

    za = np.abs(z)
    tt = np.mod(phi, 2.0 * np.pi) * (2.0 / np.pi)  # in [0, 4)

    # Equatorial branch.
    temp1 = nside * (0.5 + tt)
    temp2 = nside * (z * 0.75)
    jp_e = np.floor(temp1 - temp2).astype(np.int64)
    jm_e = np.floor(temp1 + temp2).astype(np.int64)
    ifp = jp_e >> order
    ifm = jm_e >> order
    face_e = np.where(
        ifp == ifm, (ifp & 3) + 4, np.where(ifp < ifm, ifp & 3, (ifm & 3) + 8)
    )
    ix_e = jm_e & (nside - 1)
    iy_e = nside - (jp_e & (nside - 1)) - 1

    # Polar branch.
    ntt = np.minimum(tt.astype(np.int64), 3)
    tp = tt - ntt
    tmp = nside * np.sqrt(3.0 * (1.0 - za))
    jp_p = np.minimum(np.floor(tp * tmp).astype(np.int64), nside - 1)
    jm_p = np.minimum(np.floor((1.0 - tp) * tmp).astype(np.int64), nside - 1)
    north = z >= 0
    face_p = np.where(north, ntt, ntt + 8)
    ix_p = np.where(north, nside - jm_p - 1, jp_p)
    iy_p = np.where(north, nside - jp_p - 1, jm_p)

    equatorial = za <= 2.0 / 3.0
    face = np.where(equatorial, face_e, face_p)
    ix = np.where(equatorial, ix_e, ix_p)
    iy = np.where(equatorial, iy_e, iy_p)

    within = (_spread_bits(ix) | (_spread_bits(iy) << np.uint64(1))).astype(np.int64)
    return face * (nside * nside) + within


def pix2ang_nest(nside: int, pix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pixel centers of nested indices, returned as (z, phi)."""
    nside = _check_nside(nside)
    order = nside.bit_length() - 1
    pix = np.asarray(pix, dtype=np.int64)
    if ((pix < 0) | (pix >= npix(nside))).any():
        raise ValueError("pixel index out of range")

    npface = nside * nside
    face = pix >> (2 * order)
    within = (pix & (npface - 1)).astype(np.uint64)
    ix = _compact_bits(within).astype(np.int64)
    iy = _compact_bits(within >> np.uint64(1)).astype(np.int64)

    jr = _JRLL[face] * nside - ix - iy - 1  # ring index, 1 .. 4*nside-1
    nl4 = 4 * nside
    fact2 = 4.0 / (12.0 * nside * nside)
    fact1 = 2.0 * nside * fact2

    north_cap = jr < nside
    south_cap = jr > 3 * nside
    nr = np.where(north_cap, jr, np.where(south_cap, nl4 - jr, nside))
    z = np.where(
        north_cap,
        1.0 - jr.astype(np.float64) ** 2 * fact2,
        np.where(
            south_cap,
            (nl4 - jr).astype(np.float64) ** 2 * fact2 - 1.0,
            (2 * nside - jr) * fact1,
        ),
    )
    kshift = np.where(north_cap | south_cap, 0, (jr - nside) & 1)

    jp = (_JPLL[face] * nr + ix - iy + 1 + kshift) // 2
    jp = np.where(jp > nl4, jp - nl4, jp)
    jp = np.where(jp < 1, jp + nl4, jp)
    phi = (jp - (kshift + 1) * 0.5) * (np.pi / 2.0) / nr
    return z, phi
