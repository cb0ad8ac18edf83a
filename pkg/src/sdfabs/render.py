"""Differentiable depth rendering of a posed, scaled SDF volume.

Forward pass: per-pixel sphere tracing.  Rays start where they enter the
bounding sphere of the scaled canonical cube around the object position and
advance by ``step_factor * scale * sdf`` (conservative steps, since decoded
volumes are not exact distance fields; steps are floored at half the hit
threshold so shallow dips cannot stall the march).  A pixel hits when the
metric distance dips below ``eps_hit = scale * eps_hit_voxels / R``.  Its
depth is the first zero crossing of the field along the ray, bisected to
sub-step precision; tangential rays that dip below the threshold without
crossing zero settle on the threshold crossing instead.  Depth is z-depth
(``t * ray_z``), 0 on misses.

Backward pass: the hit condition ``sdf(p(t, params)) = const`` is
differentiated implicitly at the final sample, using only that sample's
trilinear value, gradient, and corner weights.  Earlier marching steps are
held fixed, so gradients are local and cheap; cost is one extra trilinear
evaluation per hit pixel.  The quaternion gradient is the ambient 4-vector;
callers project it onto the tangent space of the unit sphere.

Rendering is deterministic: pixels are independent, and the backward
accumulation runs single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from . import rotation
from .errors import StaleHitInfo
from .geometry import PinholeCamera, Pose
from .volume import SdfVolume


@dataclass(frozen=True)
class RenderConfig:
    step_factor: float = 0.9
    eps_hit_voxels: float = 0.5
    max_steps: int = 96
    polish_iters: int = 10
    denom_floor: float = 1e-3
    bound_radius_factor: float = float(np.sqrt(3.0) / 2.0)


DEFAULT_CONFIG = RenderConfig()


@dataclass(frozen=True)
class HitInfo:
    """Per-pixel trace records plus the inputs they were computed from."""

    rows: np.ndarray
    cols: np.ndarray
    t: np.ndarray
    hit: np.ndarray
    steps: np.ndarray
    volume: SdfVolume
    pose: Pose
    scale: float
    cam: PinholeCamera
    config: RenderConfig

    @property
    def hit_count(self) -> int:
        return int(self.hit.sum())


@dataclass(frozen=True)
class RenderGradients:
    """Aggregated gradients of the cotangent-weighted depth sum.

    d_voxels maps flat voxel indices (C order of values[ix, iy, iz]) to
    gradient values; only voxels in the 8-neighborhoods of hit samples are
    nonzero.
    """

    d_position: np.ndarray
    d_quaternion: np.ndarray
    d_scale: float
    d_voxels: np.ndarray


@njit(cache=True, fastmath=True)
def _sample_value(values, r, x, y, z):
    cx = min(max(x, -0.5), 0.5)
    cy = min(max(y, -0.5), 0.5)
    cz = min(max(z, -0.5), 0.5)
    ox = x - cx
    oy = y - cy
    oz = z - cz
    ux = (cx + 0.5) * r - 0.5
    uy = (cy + 0.5) * r - 0.5
    uz = (cz + 0.5) * r - 0.5
    ix = min(max(int(np.floor(ux)), 0), r - 2)
    iy = min(max(int(np.floor(uy)), 0), r - 2)
    iz = min(max(int(np.floor(uz)), 0), r - 2)
    fx = ux - ix
    fy = uy - iy
    fz = uz - iz
    v000 = values[ix, iy, iz]
    v100 = values[ix + 1, iy, iz]
    v010 = values[ix, iy + 1, iz]
    v110 = values[ix + 1, iy + 1, iz]
    v001 = values[ix, iy, iz + 1]
    v101 = values[ix + 1, iy, iz + 1]
    v011 = values[ix, iy + 1, iz + 1]
    v111 = values[ix + 1, iy + 1, iz + 1]
    c00 = v000 * (1 - fx) + v100 * fx
    c10 = v010 * (1 - fx) + v110 * fx
    c01 = v001 * (1 - fx) + v101 * fx
    c11 = v011 * (1 - fx) + v111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    val = c0 * (1 - fz) + c1 * fz
    dist = np.sqrt(ox * ox + oy * oy + oz * oz)
    return val + dist


@njit(cache=True, fastmath=True)
def _sample_grad(values, r, x, y, z):
    """Value and analytic gradient; mirrors _sample_value."""
    cx = min(max(x, -0.5), 0.5)
    cy = min(max(y, -0.5), 0.5)
    cz = min(max(z, -0.5), 0.5)
    ox = x - cx
    oy = y - cy
    oz = z - cz
    ux = (cx + 0.5) * r - 0.5
    uy = (cy + 0.5) * r - 0.5
    uz = (cz + 0.5) * r - 0.5
    ix = min(max(int(np.floor(ux)), 0), r - 2)
    iy = min(max(int(np.floor(uy)), 0), r - 2)
    iz = min(max(int(np.floor(uz)), 0), r - 2)
    fx = ux - ix
    fy = uy - iy
    fz = uz - iz
    v000 = values[ix, iy, iz]
    v100 = values[ix + 1, iy, iz]
    v010 = values[ix, iy + 1, iz]
    v110 = values[ix + 1, iy + 1, iz]
    v001 = values[ix, iy, iz + 1]
    v101 = values[ix + 1, iy, iz + 1]
    v011 = values[ix, iy + 1, iz + 1]
    v111 = values[ix + 1, iy + 1, iz + 1]
    c00 = v000 * (1 - fx) + v100 * fx
    c10 = v010 * (1 - fx) + v110 * fx
    c01 = v001 * (1 - fx) + v101 * fx
    c11 = v011 * (1 - fx) + v111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    val = c0 * (1 - fz) + c1 * fz
    gx = (
        (v100 - v000) * (1 - fy) * (1 - fz)
        + (v110 - v010) * fy * (1 - fz)
        + (v101 - v001) * (1 - fy) * fz
        + (v111 - v011) * fy * fz
    ) * r
    gy = ((c10 - c00) * (1 - fz) + (c11 - c01) * fz) * r
    gz = (c1 - c0) * r
    dist = np.sqrt(ox * ox + oy * oy + oz * oz)
    if dist > 0.0:
        if ox != 0.0:
            gx = ox / dist
        if oy != 0.0:
            gy = oy / dist
        if oz != 0.0:
            gz = oz / dist
        val = val + dist
    return val, gx, gy, gz, ix, iy, iz, fx, fy, fz


@njit(cache=True, fastmath=True)
def _scatter_corner_weights(flat, r, ix, iy, iz, fx, fy, fz, factor):
    """Add factor-scaled trilinear weights at the 8 cell corners (C order)."""
    base = r * r * ix + r * iy + iz
    flat[base] += factor * (1 - fx) * (1 - fy) * (1 - fz)
    flat[base + r * r] += factor * fx * (1 - fy) * (1 - fz)
    flat[base + r] += factor * (1 - fx) * fy * (1 - fz)
    flat[base + r * r + r] += factor * fx * fy * (1 - fz)
    flat[base + 1] += factor * (1 - fx) * (1 - fy) * fz
    flat[base + r * r + 1] += factor * fx * (1 - fy) * fz
    flat[base + r + 1] += factor * (1 - fx) * fy * fz
    flat[base + r * r + r + 1] += factor * fx * fy * fz


@njit(cache=True, fastmath=True)
def _rotate_inv_dq_scalar(qw, qx, qy, qz, vx, vy, vz, cx, cy, cz):
    """d/dq of c . (R(q)^T v), ambient 4-vector, scalar form."""
    uvx = qy * vz - qz * vy
    uvy = qz * vx - qx * vz
    uvz = qx * vy - qy * vx
    dw = -2.0 * (uvx * cx + uvy * cy + uvz * cz)
    vcx = vy * cz - vz * cy
    vcy = vz * cx - vx * cz
    vcz = vx * cy - vy * cx
    uvcx = uvy * cz - uvz * cy
    uvcy = uvz * cx - uvx * cz
    uvcz = uvx * cy - uvy * cx
    ucx = qy * cz - qz * cy
    ucy = qz * cx - qx * cz
    ucz = qx * cy - qy * cx
    vucx = vy * ucz - vz * ucy
    vucy = vz * ucx - vx * ucz
    vucz = vx * ucy - vy * ucx
    dx = -2.0 * qw * vcx + 2.0 * uvcx - 2.0 * vucx
    dy = -2.0 * qw * vcy + 2.0 * uvcy - 2.0 * vucy
    dz = -2.0 * qw * vcz + 2.0 * uvcz - 2.0 * vucz
    return dw, dx, dy, dz


@njit(cache=True, fastmath=True, parallel=True)
def _trace_kernel(
    values,
    r,
    rows,
    cols,
    fx_cam,
    fy_cam,
    cx_cam,
    cy_cam,
    rot,
    pos,
    scale,
    kappa,
    eps_hit,
    max_steps,
    polish_iters,
    bound_radius,
    out_depth,
    out_t,
    out_hit,
    out_steps,
):
    n = rows.shape[0]
    pp = pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]
    for k in prange(n):
        dx = (cols[k] + 0.5 - cx_cam) / fx_cam
        dy = (rows[k] + 0.5 - cy_cam) / fy_cam
        dz = 1.0
        inv_n = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
        dx *= inv_n
        dy *= inv_n
        dz *= inv_n
        b = dx * pos[0] + dy * pos[1] + dz * pos[2]
        disc = b * b - (pp - bound_radius * bound_radius)
        out_hit[k] = 0
        out_t[k] = 0.0
        out_steps[k] = 0
        if disc <= 0.0:
            continue
        sq = np.sqrt(disc)
        t_exit = b + sq
        if t_exit <= 0.0:
            continue
        t = b - sq
        if t < 0.0:
            t = 0.0
        inv_s = 1.0 / scale
        eps_level = eps_hit * inv_s
        dipped = False  # sdf went below the hit threshold somewhere
        crossed = False  # sdf went below zero somewhere
        eps_lo = t
        eps_lo_val = 0.0
        eps_hi = t
        eps_hi_val = 0.0
        lo = t
        val_lo = 0.0
        hi = t
        val_hi = 0.0
        t_prev = t
        val_prev = np.inf
        steps = 0
        while steps < max_steps:
            wx = t * dx - pos[0]
            wy = t * dy - pos[1]
            wz = t * dz - pos[2]
            px = (rot[0, 0] * wx + rot[1, 0] * wy + rot[2, 0] * wz) * inv_s
            py = (rot[0, 1] * wx + rot[1, 1] * wy + rot[2, 1] * wz) * inv_s
            pz = (rot[0, 2] * wx + rot[1, 2] * wy + rot[2, 2] * wz) * inv_s
            d = _sample_value(values, r, px, py, pz)
            steps += 1
            if d < eps_level and not dipped:
                dipped = True
                eps_lo = t_prev
                eps_lo_val = val_prev
                eps_hi = t
                eps_hi_val = d
            if d <= 0.0:
                crossed = True
                lo = t_prev
                val_lo = val_prev
                hi = t
                val_hi = d
                break
            t_prev = t
            val_prev = d
            adv = kappa * scale * d
            if adv < 0.5 * eps_hit:
                adv = 0.5 * eps_hit  # keep moving through shallow dips
            t = t + adv
            if t > t_exit:
                break
        out_steps[k] = steps
        if not (dipped or crossed):
            continue
        # Depth settles on the first zero crossing when one exists, else on
        # the first hit-threshold crossing (tangential dips).
        if crossed:
            level = 0.0
        else:
            level = eps_level
            lo = eps_lo
            val_lo = eps_lo_val
            hi = eps_hi
            val_hi = eps_hi_val
        t = hi
        bracketed = hi > lo and val_lo > level and np.isfinite(val_lo)
        if bracketed:
            for _ in range(polish_iters):
                mid = 0.5 * (lo + hi)
                wx = mid * dx - pos[0]
                wy = mid * dy - pos[1]
                wz = mid * dz - pos[2]
                px = (rot[0, 0] * wx + rot[1, 0] * wy + rot[2, 0] * wz) * inv_s
                py = (rot[0, 1] * wx + rot[1, 1] * wy + rot[2, 1] * wz) * inv_s
                pz = (rot[0, 2] * wx + rot[1, 2] * wy + rot[2, 2] * wz) * inv_s
                vm = _sample_value(values, r, px, py, pz)
                if vm < level:
                    hi = mid
                    val_hi = vm
                else:
                    lo = mid
                    val_lo = vm
            if val_lo > val_hi:
                t = lo + (val_lo - level) * (hi - lo) / (val_lo - val_hi)
            else:
                t = hi
        out_hit[k] = 1
        out_t[k] = t
        out_depth[rows[k], cols[k]] = t * dz


@njit(cache=True)
def _backward_kernel(
    values,
    r,
    rows,
    cols,
    t_arr,
    hit,
    cot,
    fx_cam,
    fy_cam,
    cx_cam,
    cy_cam,
    rot,
    quat,
    pos,
    scale,
    denom_floor,
    d_pos,
    d_quat,
    d_scale_out,
    d_vox,
):
    n = rows.shape[0]
    inv_s = 1.0 / scale
    qw = quat[0]
    qx = quat[1]
    qy = quat[2]
    qz = quat[3]
    for k in range(n):
        if hit[k] == 0:
            continue
        c_px = cot[k]
        if c_px == 0.0:
            continue
        dx = (cols[k] + 0.5 - cx_cam) / fx_cam
        dy = (rows[k] + 0.5 - cy_cam) / fy_cam
        dz = 1.0
        inv_n = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
        dx *= inv_n
        dy *= inv_n
        dz *= inv_n
        t = t_arr[k]
        wx = t * dx - pos[0]
        wy = t * dy - pos[1]
        wz = t * dz - pos[2]
        px = (rot[0, 0] * wx + rot[1, 0] * wy + rot[2, 0] * wz) * inv_s
        py = (rot[0, 1] * wx + rot[1, 1] * wy + rot[2, 1] * wz) * inv_s
        pz = (rot[0, 2] * wx + rot[1, 2] * wy + rot[2, 2] * wz) * inv_s
        val, gx, gy, gz, ix, iy, iz, fx, fy, fz = _sample_grad(values, r, px, py, pz)
        dox = rot[0, 0] * dx + rot[1, 0] * dy + rot[2, 0] * dz
        doy = rot[0, 1] * dx + rot[1, 1] * dy + rot[2, 1] * dz
        doz = rot[0, 2] * dx + rot[1, 2] * dy + rot[2, 2] * dz
        denom = gx * dox + gy * doy + gz * doz
        if denom > -denom_floor:
            denom = -denom_floor
        common = c_px * dz  # d(loss)/dt for this pixel
        # position: dt/dpos = (R g) / denom
        rgx = rot[0, 0] * gx + rot[0, 1] * gy + rot[0, 2] * gz
        rgy = rot[1, 0] * gx + rot[1, 1] * gy + rot[1, 2] * gz
        rgz = rot[2, 0] * gx + rot[2, 1] * gy + rot[2, 2] * gz
        d_pos[0] += common * rgx / denom
        d_pos[1] += common * rgy / denom
        d_pos[2] += common * rgz / denom
        # scale: dt/ds = (g . p) / denom
        gp = gx * px + gy * py + gz * pz
        d_scale_out[0] += common * gp / denom
        # quaternion: dt/dq = -(J^T g) / denom with J = d(R(q)^T w)/dq
        dw, jx, jy, jz = _rotate_inv_dq_scalar(qw, qx, qy, qz, wx, wy, wz, gx, gy, gz)
        factor = -common / denom
        d_quat[0] += factor * dw
        d_quat[1] += factor * jx
        d_quat[2] += factor * jy
        d_quat[3] += factor * jz
        # voxels: dt/dv = -scale * weight / denom at the 8 corners
        vox_factor = -common * scale / denom
        _scatter_corner_weights(d_vox, r, ix, iy, iz, fx, fy, fz, vox_factor)


def _pixel_lists(cam: PinholeCamera, mask: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    if mask is None:
        rows, cols = np.mgrid[0 : cam.height, 0 : cam.width]
        return rows.ravel().astype(np.int64), cols.ravel().astype(np.int64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (cam.height, cam.width):
        raise ValueError("mask shape does not match camera image size")
    rows, cols = np.nonzero(mask)
    return rows.astype(np.int64), cols.astype(np.int64)


def render(
    vol: SdfVolume,
    pose: Pose,
    scale: float,
    cam: PinholeCamera,
    mask: np.ndarray | None = None,
    config: RenderConfig = DEFAULT_CONFIG,
    pixels: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, HitInfo]:
    """Sphere-trace a depth map; ``pose`` places the object in the camera frame.

    Returns the (H, W) z-depth image (0 where missed or not rendered) and the
    per-pixel :class:`HitInfo` needed by :func:`render_backward`.  ``pixels``
    (precomputed row/col arrays) short-cuts the mask scan for repeat renders
    of the same pixel set.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    rows, cols = pixels if pixels is not None else _pixel_lists(cam, mask)
    depth = np.zeros((cam.height, cam.width))
    t = np.zeros(rows.shape[0])
    hit = np.zeros(rows.shape[0], dtype=np.uint8)
    steps = np.zeros(rows.shape[0], dtype=np.int32)
    eps_hit = scale * config.eps_hit_voxels / vol.resolution
    _trace_kernel(
        vol.values,
        vol.resolution,
        rows,
        cols,
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        rotation.to_matrix(pose.orientation),
        pose.position,
        float(scale),
        config.step_factor,
        eps_hit,
        config.max_steps,
        config.polish_iters,
        scale * config.bound_radius_factor,
        depth,
        t,
        hit,
        steps,
    )
    info = HitInfo(rows, cols, t, hit, steps, vol, pose, float(scale), cam, config)
    return depth, info


def render_backward(
    vol: SdfVolume,
    pose: Pose,
    scale: float,
    cam: PinholeCamera,
    hitinfo: HitInfo,
    cotangent: np.ndarray,
) -> RenderGradients:
    """Gradients of ``sum(cotangent * depth)`` w.r.t. pose, scale, and voxels.

    ``cotangent`` may be a full (H, W) image or a vector aligned with the
    traced pixel list in ``hitinfo``.
    """
    if (
        hitinfo.volume is not vol
        or hitinfo.cam != cam
        or hitinfo.scale != float(scale)
        or not np.array_equal(hitinfo.pose.position, pose.position)
        or not np.array_equal(hitinfo.pose.orientation, pose.orientation)
    ):
        raise StaleHitInfo("hit records were produced by different render inputs")
    cot = np.ascontiguousarray(cotangent, dtype=np.float64)
    if cot.shape == (cam.height, cam.width):
        cot = cot[hitinfo.rows, hitinfo.cols]
    elif cot.shape != hitinfo.rows.shape:
        raise ValueError("cotangent must be a full image or match the pixel list")
    r = vol.resolution
    d_pos = np.zeros(3)
    d_quat = np.zeros(4)
    d_scale = np.zeros(1)
    d_vox = np.zeros(r * r * r)
    _backward_kernel(
        vol.values,
        r,
        hitinfo.rows,
        hitinfo.cols,
        hitinfo.t,
        hitinfo.hit,
        cot,
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        rotation.to_matrix(pose.orientation),
        pose.orientation,
        pose.position,
        float(scale),
        hitinfo.config.denom_floor,
        d_pos,
        d_quat,
        d_scale,
        d_vox,
    )
    return RenderGradients(d_pos, d_quat, float(d_scale[0]), d_vox)
