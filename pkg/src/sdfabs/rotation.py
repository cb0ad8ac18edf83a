"""Unit-quaternion utilities.

Quaternions are stored as (w, x, y, z) arrays.  ``rotate(q, v)`` applies the
rotation taking child-frame vectors into the parent frame.  Because q and -q
encode the same rotation, :func:`canonicalize` fixes the sign so the first
nonzero component (in w, x, y, z order) is positive.
"""

from __future__ import annotations

import numpy as np

from .errors import NotNormalized

NORM_TOLERANCE = 1e-6


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def check_normalized(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    err = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
    if (err > NORM_TOLERANCE).any():
        raise NotNormalized(f"quaternion norm off unit by up to {err.max():.3g}")
    return q


def canonicalize(q: np.ndarray) -> np.ndarray:
    """Flip sign so the first nonzero of (w, x, y, z) is positive."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q).copy()
    sign = np.zeros(q.shape[0])
    for k in range(4):
        comp = q[:, k]
        undecided = sign == 0
        sign[undecided] = np.sign(comp[undecided])
    sign[sign == 0] = 1.0
    q *= sign[:, None]
    return q[0] if single else q


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b (compose rotations: apply b, then a)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v by unit quaternion q (child -> parent)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., 1:]
    w = q[..., 0:1]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def rotate_inv(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v by the inverse of q (parent -> child)."""
    return rotate(conjugate(q), v)


def to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for quaternions, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def geodesic_angle(q1: np.ndarray, q2: np.ndarray) -> float | np.ndarray:
    """Rotation angle between two unit quaternions, in [0, pi]."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    dot = np.abs((q1 * q2).sum(axis=-1))
    return 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))


def sample_uniform(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform random rotations via normalized 4-d Gaussians."""
    n = 1 if size is None else size
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q = canonicalize(q)
    return q[0] if size is None else q


def rotate_inv_dq(q: np.ndarray, v: np.ndarray, cot: np.ndarray) -> np.ndarray:
    """Accumulated d/dq of sum_i cot_i . (R(q)^T v_i), as an ambient 4-vector.

    Differentiates the unit-quaternion rotation formula without the
    normalization constraint; callers project onto the tangent space of the
    unit sphere when a constrained derivative is needed.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    cot = np.atleast_2d(np.asarray(cot, dtype=np.float64))
    w = q[0]
    u = q[1:]
    uv = np.cross(u, v)
    vc = np.cross(v, cot)
    dw = -2.0 * (uv * cot).sum()
    du = (
        -2.0 * w * vc
        + 2.0 * np.cross(uv, cot)
        - 2.0 * np.cross(v, np.cross(np.broadcast_to(u, v.shape), cot))
    ).sum(axis=0)
    return np.concatenate([[dw], du])


def tangent_project(q: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Remove the radial component of an ambient quaternion gradient."""
    q = np.asarray(q, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    return grad - (grad @ q) * q
