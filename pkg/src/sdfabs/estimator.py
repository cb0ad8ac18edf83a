"""Joint pose, scale, and shape estimation against observed depth maps.

The optimizable state is an :class:`Estimate` (world position, unit
quaternion, metric scale, latent shape code).  Two complementary losses drive
it: the point-to-surface loss interpolates the decoded volume at back-projected
observed points (misaligned estimates leave points off the zero level), and
the depth loss compares rendered against observed depth where both are valid
(surplus or missing coverage shows up there).  Per-view losses are summed, so
extra views sharpen the objective without any special handling.

Initialization scores every cell of an orientation grid by the
point-to-surface loss at the mean shape, producing a discrete orientation
distribution whose argmax seeds the refinement; refinement runs Adam on the
ambient parameters with the quaternion gradient projected to the tangent
space and renormalization after every step, keeping the best iterate seen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from . import rotation
from .errors import EmptyPointSet, NoSurface
from .geometry import PinholeCamera, Pose
from .render import (
    RenderConfig,
    _rotate_inv_dq_scalar,
    _sample_grad,
    _scatter_corner_weights,
    render,
    render_backward,
)
from .shapespace import ShapeSpace, decode, decode_vjp
from .so3grid import OrientationGrid, all_cell_centers, cell_center
from .volume import SdfVolume, extract_surface_points, sample

_INIT_CELL_CHUNK = 512


@dataclass(frozen=True)
class View:
    """One registered observation: depth + mask + camera + known camera pose."""

    depth: np.ndarray
    mask: np.ndarray
    cam: PinholeCamera
    cam_pose: Pose

    def __post_init__(self):
        depth = np.ascontiguousarray(self.depth, dtype=np.float64)
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        if depth.shape != (self.cam.height, self.cam.width) or mask.shape != depth.shape:
            raise ValueError("depth/mask shape must match the camera image size")
        if not np.isfinite(depth).all() or (depth < 0).any():
            raise ValueError("depths must be finite and non-negative")
        depth.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "mask", mask)

    @cached_property
    def _observed(self) -> np.ndarray:
        obs = self.mask & (self.depth > 0)
        obs.flags.writeable = False
        return obs

    @cached_property
    def _observed_pixels(self) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = np.nonzero(self._observed)
        return rows.astype(np.int64), cols.astype(np.int64)

    @cached_property
    def _points_cam(self) -> np.ndarray:
        rows, cols = self._observed_pixels
        if rows.size == 0:
            raise EmptyPointSet("view has no masked pixel with valid depth")
        d = self.depth[rows, cols]
        return np.stack(
            [
                d * (cols + 0.5 - self.cam.cx) / self.cam.fx,
                d * (rows + 0.5 - self.cam.cy) / self.cam.fy,
                d,
            ],
            axis=1,
        )


def backproject(view: View) -> np.ndarray:
    """Camera-frame points of all masked pixels with valid depth, (N, 3)."""
    return view._points_cam


@dataclass(frozen=True)
class Estimate:
    """World position (m), unit quaternion, metric scale (m), latent shape."""

    position: np.ndarray
    orientation: np.ndarray
    scale: float
    shape: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=np.float64).reshape(3)
        )
        object.__setattr__(
            self,
            "orientation",
            rotation.check_normalized(np.asarray(self.orientation, dtype=np.float64).reshape(4)),
        )
        object.__setattr__(self, "shape", np.asarray(self.shape, dtype=np.float64).reshape(-1))
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def object_in_camera(self, view: View) -> Pose:
        return view.cam_pose.inverse().compose(Pose(self.position, self.orientation))


@dataclass
class LossGradients:
    position: np.ndarray
    orientation: np.ndarray  # ambient 4-vector
    log_scale: float
    shape: np.ndarray

    @staticmethod
    def zeros(latent_dim: int) -> "LossGradients":
        return LossGradients(np.zeros(3), np.zeros(4), 0.0, np.zeros(latent_dim))

    def add_scaled(self, other: "LossGradients", w: float) -> None:
        self.position += w * other.position
        self.orientation += w * other.orientation
        self.log_scale += w * other.log_scale
        self.shape += w * other.shape


@dataclass
class LossResult:
    value: float
    gradients: LossGradients
    degenerate: bool = False


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 50
    lambda_sdf: float = 1.0
    lambda_depth: float = 1.0
    lr_position: float = 5e-3
    lr_orientation: float = 2e-2
    lr_log_scale: float = 1e-2
    lr_shape: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    freeze_shape: bool = False
    render: RenderConfig = field(default_factory=RenderConfig)


@dataclass(frozen=True)
class InitConfig:
    beta: float = 50.0
    max_points: int = 1000
    view_selection: str = "first"  # or "best"
    scale_bounds: tuple[float, float] | None = None
    # weight of the free-space term: candidate surface predicted in front of
    # valid observed depth contradicts the observation (visibility cue the
    # point-to-surface distance alone cannot express)
    free_space_weight: float = 1.0
    free_space_points: int = 400


@dataclass(frozen=True)
class InitResult:
    estimate: Estimate
    orientation_distribution: np.ndarray
    best_cell: int
    view_index: int = 0


@njit(cache=True, fastmath=True)
def _point_loss_kernel(values, r, v, w, rot, quat, scale, out, d_pos_canon, d_quat, vox_cot):
    """Weighted mean-|sdf| of transformed points plus all gradient pieces.

    v: points minus object position (world frame); w: per-point weights.
    out[0] accumulates the loss, out[1] the log-scale gradient; d_pos_canon
    collects the canonical-frame position cotangent (rotated by the caller).
    """
    inv_s = 1.0 / scale
    qw = quat[0]
    qx = quat[1]
    qy = quat[2]
    qz = quat[3]
    for i in range(v.shape[0]):
        wx = v[i, 0]
        wy = v[i, 1]
        wz = v[i, 2]
        px = (rot[0, 0] * wx + rot[1, 0] * wy + rot[2, 0] * wz) * inv_s
        py = (rot[0, 1] * wx + rot[1, 1] * wy + rot[2, 1] * wz) * inv_s
        pz = (rot[0, 2] * wx + rot[1, 2] * wy + rot[2, 2] * wz) * inv_s
        val, gx, gy, gz, ix, iy, iz, fx, fy, fz = _sample_grad(values, r, px, py, pz)
        out[0] += w[i] * abs(val)
        sgn = w[i] if val > 0.0 else (-w[i] if val < 0.0 else 0.0)
        cx = sgn * gx
        cy = sgn * gy
        cz = sgn * gz
        d_pos_canon[0] += cx
        d_pos_canon[1] += cy
        d_pos_canon[2] += cz
        out[1] += -(cx * px + cy * py + cz * pz)
        dw, jx, jy, jz = _rotate_inv_dq_scalar(qw, qx, qy, qz, wx, wy, wz, cx, cy, cz)
        d_quat[0] += dw
        d_quat[1] += jx
        d_quat[2] += jy
        d_quat[3] += jz
        _scatter_corner_weights(vox_cot, r, ix, iy, iz, fx, fy, fz, sgn)


def loss_sdf(
    estimate: Estimate,
    space: ShapeSpace,
    views: list[View],
    volume: SdfVolume | None = None,
    timings: dict | None = None,
) -> LossResult:
    """Mean |interpolated distance| of observed points in the object frame.

    Returns the per-view means summed over views, with gradients for all
    latent fields (shape via the decoder adjoint).
    """
    t0 = time.perf_counter()
    vol = volume if volume is not None else decode(space, estimate.shape)
    q = estimate.orientation
    s = estimate.scale
    grads = LossGradients.zeros(space.latent_dim)
    chunks = []
    weights = []
    for view in views:
        pts_w = view.cam_pose.transform(backproject(view))
        chunks.append(pts_w - estimate.position)
        weights.append(np.full(len(pts_w), 1.0 / len(pts_w)))
    v = np.ascontiguousarray(np.concatenate(chunks))
    w = np.concatenate(weights)
    out = np.zeros(2)
    d_pos_canon = np.zeros(3)
    d_quat = np.zeros(4)
    vox_cot = np.zeros(space.mean.size)
    _point_loss_kernel(
        vol.values, vol.resolution, v, w, rotation.to_matrix(q), q, s, out, d_pos_canon, d_quat, vox_cot
    )
    grads.position += rotation.rotate(q, d_pos_canon) * (-1.0 / s)
    grads.orientation += d_quat / s
    grads.log_scale += out[1]
    t1 = time.perf_counter()
    grads.shape += decode_vjp(space, vox_cot)
    if timings is not None:
        t2 = time.perf_counter()
        timings["losses"] = timings.get("losses", 0.0) + (t1 - t0)
        timings["decode_backward"] = timings.get("decode_backward", 0.0) + (t2 - t1)
    return LossResult(float(out[0]), grads)


def loss_depth(
    estimate: Estimate,
    space: ShapeSpace,
    views: list[View],
    volume: SdfVolume | None = None,
    render_config: RenderConfig | None = None,
    timings: dict | None = None,
) -> LossResult:
    """Mean |rendered - observed| depth over pixels valid in both maps.

    A view whose valid set is empty contributes nothing and flags the result
    degenerate.
    """
    cfg = render_config if render_config is not None else RenderConfig()
    t_start = time.perf_counter()
    spent_elsewhere = 0.0
    vol = volume if volume is not None else decode(space, estimate.shape)
    s = estimate.scale
    grads = LossGradients.zeros(space.latent_dim)
    vox_cot = np.zeros(space.mean.size)
    value = 0.0
    degenerate = False
    for view in views:
        pose_co = estimate.object_in_camera(view)
        rows, cols = view._observed_pixels
        t0 = time.perf_counter()
        rendered, info = render(vol, pose_co, s, view.cam, config=cfg, pixels=(rows, cols))
        if timings is not None:
            dt = time.perf_counter() - t0
            spent_elsewhere += dt
            timings["render_forward"] = timings.get("render_forward", 0.0) + dt
        hit = info.hit.astype(bool)
        n = int(hit.sum())
        if n == 0:
            degenerate = True
            continue
        diff = rendered[rows, cols] - view.depth[rows, cols]
        value += float(np.abs(diff[hit]).mean())
        cot = np.where(hit, np.sign(diff) / n, 0.0)
        t0 = time.perf_counter()
        rg = render_backward(vol, pose_co, s, view.cam, info, cot)
        if timings is not None:
            dt = time.perf_counter() - t0
            spent_elsewhere += dt
            timings["other_backward"] = timings.get("other_backward", 0.0) + dt
        q_wc = view.cam_pose.orientation
        grads.position += rotation.rotate(q_wc, rg.d_position)
        grads.orientation += rotation.multiply(q_wc, rg.d_quaternion)
        grads.log_scale += rg.d_scale * s
        vox_cot += rg.d_voxels
    t0 = time.perf_counter()
    grads.shape += decode_vjp(space, vox_cot)
    if timings is not None:
        t1 = time.perf_counter()
        timings["decode_backward"] = timings.get("decode_backward", 0.0) + (t1 - t0)
        timings["losses"] = timings.get("losses", 0.0) + (
            (t0 - t_start) - spent_elsewhere
        )
    return LossResult(value, grads, degenerate)


def loss_total(
    estimate: Estimate,
    space: ShapeSpace,
    views: list[View],
    cfg: RefineConfig,
    volume: SdfVolume | None = None,
    timings: dict | None = None,
) -> LossResult:
    """Weighted sum of the two losses; decodes the volume once."""
    t0 = time.perf_counter()
    vol = volume if volume is not None else decode(space, estimate.shape)
    if timings is not None and volume is None:
        timings["decode_forward"] = timings.get("decode_forward", 0.0) + (
            time.perf_counter() - t0
        )
    value = 0.0
    grads = LossGradients.zeros(space.latent_dim)
    degenerate = False
    if cfg.lambda_sdf != 0.0:
        res = loss_sdf(estimate, space, views, volume=vol, timings=timings)
        value += cfg.lambda_sdf * res.value
        grads.add_scaled(res.gradients, cfg.lambda_sdf)
    if cfg.lambda_depth != 0.0:
        res = loss_depth(
            estimate, space, views, volume=vol, render_config=cfg.render, timings=timings
        )
        value += cfg.lambda_depth * res.value
        grads.add_scaled(res.gradients, cfg.lambda_depth)
        degenerate = res.degenerate
    return LossResult(value, grads, degenerate)


def _principal_extent(pts: np.ndarray) -> float:
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    proj = centered @ vecs[:, -1]
    return float(proj.max() - proj.min())


def _subsample(pts: np.ndarray, max_points: int) -> np.ndarray:
    if len(pts) <= max_points:
        return pts
    idx = np.floor(np.linspace(0, len(pts) - 1, max_points)).astype(np.int64)
    return pts[idx]


def _mean_surface_with_normals(
    mean_vol: SdfVolume, max_points: int = 1500
) -> tuple[np.ndarray, np.ndarray]:
    surf = _subsample(extract_surface_points(mean_vol), max_points)
    normals = sample(mean_vol, surf).gradient
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    return surf, normals


def _score_view(
    view: View,
    mean_vol: SdfVolume,
    ref_half_extent: float,
    surf: np.ndarray,
    normals: np.ndarray,
    latent_dim: int,
    grid: OrientationGrid,
    cfg: InitConfig,
) -> tuple[np.ndarray, Estimate]:
    pts_w = view.cam_pose.transform(backproject(view))
    centroid = pts_w.mean(axis=0)
    # metric half-extent over the canonical half-extent of the mean shape
    scale = 0.5 * _principal_extent(pts_w) / ref_half_extent
    if cfg.scale_bounds is not None:
        scale = float(np.clip(scale, *cfg.scale_bounds))
    pts = _subsample(pts_w, cfg.max_points) - centroid

    # The observed centroid is the center of the VISIBLE surface, not of the
    # object; for each candidate orientation, predict that offset from the
    # mean shape's camera-facing surface points and score with it removed.
    view_dir = centroid - view.cam_pose.position
    view_dir /= max(np.linalg.norm(view_dir), 1e-12)

    probe = _subsample(surf, cfg.free_space_points)
    cam = view.cam
    centers = all_cell_centers(grid)
    losses = np.empty(grid.cell_count)
    visible_centroids = np.empty((grid.cell_count, 3))
    for start in range(0, grid.cell_count, _INIT_CELL_CHUNK):
        chunk = centers[start : start + _INIT_CELL_CHUNK]
        mats = rotation.to_matrix(chunk)  # (C, 3, 3)
        dir_canon = np.einsum("cji,j->ci", mats, view_dir)
        facing = (normals @ dir_canon.T) < 0.0  # (S, C)
        counts = np.maximum(facing.sum(axis=0), 1)
        c_vis = (facing.T @ surf) / counts[:, None]
        visible_centroids[start : start + len(chunk)] = c_vis
        p = np.einsum("cji,nj->cni", mats, pts) / scale + c_vis[:, None, :]
        vals = sample(mean_vol, p.reshape(-1, 3)).value.reshape(len(chunk), -1)
        losses[start : start + len(chunk)] = np.abs(vals).mean(axis=1)
        if cfg.free_space_weight > 0.0:
            # project candidate surface points; being in front of valid
            # observed depth puts surface inside observed free space
            pos_c = centroid[None, :] - scale * np.einsum("cij,cj->ci", mats, c_vis)
            world = scale * np.einsum("cij,nj->cni", mats, probe) + pos_c[:, None, :]
            cam_pts = view.cam_pose.inverse_transform(world.reshape(-1, 3)).reshape(world.shape)
            z = np.maximum(cam_pts[..., 2], 1e-9)
            ui = np.clip(
                (cam_pts[..., 0] / z * cam.fx + cam.cx).astype(np.int64), 0, cam.width - 1
            )
            vi = np.clip(
                (cam_pts[..., 1] / z * cam.fy + cam.cy).astype(np.int64), 0, cam.height - 1
            )
            observed = view.depth[vi, ui]
            margin = 1.5 * scale / mean_vol.resolution
            violation = np.maximum(np.where(observed > 0, observed - z, 0.0) - margin, 0.0)
            losses[start : start + len(chunk)] += (
                cfg.free_space_weight * violation.mean(axis=1) / scale
            )
    logits = -cfg.beta * (losses - losses.min())
    o = np.exp(logits)
    o /= o.sum()
    best = int(o.argmax())
    best_q = cell_center(best, grid)
    position = centroid - scale * rotation.rotate(best_q, visible_centroids[best])
    est = Estimate(
        position=position,
        orientation=best_q,
        scale=scale,
        shape=np.zeros(latent_dim),
    )
    return o, est


def init_grid_scoring(
    views: list[View],
    space: ShapeSpace,
    grid: OrientationGrid,
    cfg: InitConfig = InitConfig(),
) -> InitResult:
    """Geometric initializer: centroid position, extent-based scale, mean
    shape, and an orientation distribution from scoring every grid cell."""
    if not views:
        raise EmptyPointSet("need at least one view")
    mean_vol = decode(space, np.zeros(space.latent_dim))
    try:
        surf, normals = _mean_surface_with_normals(mean_vol)
        ref_half_extent = 0.5 * _principal_extent(surf)
    except NoSurface:
        surf = np.zeros((1, 3))
        normals = np.array([[0.0, 0.0, 1.0]])
        ref_half_extent = 0.45
    if cfg.view_selection == "best":
        candidates = list(range(len(views)))
    else:
        candidates = [0]
    scored = []
    for vi in candidates:
        o, est = _score_view(
            views[vi], mean_vol, ref_half_extent, surf, normals, space.latent_dim, grid, cfg
        )
        scored.append((float(o.max()), vi, o, est))
    _, view_index, o, est = max(scored, key=lambda s: s[0])
    return InitResult(
        estimate=est,
        orientation_distribution=o,
        best_cell=int(o.argmax()),
        view_index=view_index,
    )


class _Adam:
    def __init__(self, shapes: dict, cfg: RefineConfig):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.cfg = cfg
        self.t = 0

    def step(self, grads: dict, lrs: dict) -> dict:
        self.t += 1
        cfg = self.cfg
        out = {}
        for k, g in grads.items():
            self.m[k] = cfg.beta1 * self.m[k] + (1 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
            mhat = self.m[k] / (1 - cfg.beta1**self.t)
            vhat = self.v[k] / (1 - cfg.beta2**self.t)
            out[k] = -lrs[k] * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        return out


def refine(
    views: list[View],
    init: Estimate,
    space: ShapeSpace,
    cfg: RefineConfig = RefineConfig(),
    timings: dict | None = None,
) -> tuple[Estimate, np.ndarray]:
    """Adam refinement of all latent fields; returns the best iterate seen
    and the per-iteration loss trace (initial value first)."""
    if cfg.iterations < 1:
        raise ValueError("iterations must be >= 1")
    n = space.latent_dim
    adam = _Adam({"pos": 3, "quat": 4, "logs": 1, "shape": n}, cfg)
    lrs = {
        "pos": cfg.lr_position,
        "quat": cfg.lr_orientation,
        "logs": cfg.lr_log_scale,
        "shape": cfg.lr_shape,
    }
    state = init
    trace = []
    best = (np.inf, init)
    # a frozen shape decodes to the same volume every iteration
    frozen_vol = decode(space, init.shape) if cfg.freeze_shape else None
    for _ in range(cfg.iterations):
        res = loss_total(state, space, views, cfg, volume=frozen_vol, timings=timings)
        trace.append(res.value)
        if res.value < best[0]:
            best = (res.value, state)
        g = res.gradients
        qg = rotation.tangent_project(state.orientation, g.orientation)
        shape_g = np.zeros(n) if cfg.freeze_shape else g.shape
        t0 = time.perf_counter()
        delta = adam.step(
            {"pos": g.position, "quat": qg, "logs": np.array([g.log_scale]), "shape": shape_g},
            lrs,
        )
        state = Estimate(
            position=state.position + delta["pos"],
            orientation=rotation.normalize(state.orientation + delta["quat"]),
            scale=float(state.scale * np.exp(delta["logs"][0])),
            shape=state.shape + delta["shape"],
        )
        if timings is not None:
            timings["optimizer"] = timings.get("optimizer", 0.0) + (time.perf_counter() - t0)
    res = loss_total(state, space, views, cfg, volume=frozen_vol, timings=timings)
    trace.append(res.value)
    if res.value < best[0]:
        best = (res.value, state)
    return best[1], np.asarray(trace)


@dataclass(frozen=True)
class EstimateConfig:
    init: InitConfig = field(default_factory=InitConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    skip_refine: bool = False


def estimate(
    views: list[View],
    space: ShapeSpace,
    grid: OrientationGrid,
    cfg: EstimateConfig = EstimateConfig(),
) -> tuple[Estimate, InitResult, np.ndarray]:
    """Initialization followed by refinement (the end-to-end pipeline)."""
    init = init_grid_scoring(views, space, grid, cfg.init)
    if cfg.skip_refine:
        return init.estimate, init, np.asarray([])
    final, trace = refine(views, init.estimate, space, cfg.refine)
    return final, init, trace
