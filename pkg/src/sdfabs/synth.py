"""Synthetic scene and dataset generation with sensor-style corruption.

Single scenes place a latent-sampled shape at a uniform image pixel, a
uniform distance along that pixel's ray, a uniform orientation, and a
category-distributed scale, then render its depth map.  Multi-view datasets
instead follow a fixed protocol: the object sits at the world origin, camera
orientations are sampled uniformly, and each camera is positioned so the
object origin lies ``view_distance`` ahead on its principal axis.

Two corruptions model real segmentation + depth sensors: a random affine
warp of the mask (pixels gained by the warped mask receive uniform outlier
depths, pixels lost are dropped) and, with probability one half, a Gaussian
blur of the valid depth region via normalized convolution, which produces
the flying-pixel artifacts seen at object boundaries.

Per-scene RNG streams are derived from the master seed with splitmix64
(seed_i = splitmix64(master ^ scene_index)), so datasets are byte-identical
for a given seed and scenes can be generated in any order or in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fileio, shapes
from .errors import DegenerateConfig
from .estimator import Estimate, View
from .geometry import PinholeCamera, Pose
from .render import RenderConfig, render
from .rotation import sample_uniform, to_matrix
from .shapespace import NearSurfaceWeighting, ShapeSpace, decode, encode, fit
from .volume import bake

DEFAULT_CAMERA = PinholeCamera(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)


def random_shape_spec(kind: str, rng: np.random.Generator) -> shapes.ShapeSpec:
    """Draw one analytic shape from a named procedural family."""
    if kind == "box":
        return shapes.box(rng.uniform(0.18, 0.38, size=3))
    if kind == "cup":
        r = rng.uniform(0.22, 0.30)
        hh = rng.uniform(0.25, 0.35)
        wall = rng.uniform(0.05, 0.08)
        outer = shapes.cylinder(r, hh)
        inner = shapes.cylinder(r - wall, hh - wall, offset=(0.0, 0.0, wall + 0.01))
        return shapes.subtraction(outer, inner)
    if kind == "bumpbox":
        half = rng.uniform(0.20, 0.30, size=3)
        bump_r = rng.uniform(0.10, 0.13)
        corner = half * 0.9
        cap = 0.44 - bump_r
        corner = np.minimum(corner, cap)
        return shapes.union(shapes.box(half), shapes.sphere(bump_r, offset=tuple(corner)))
    if kind == "club":
        # elongated, unequal ends, two off-axis bumps: orientation is
        # unambiguous from almost every view
        j = rng.uniform
        return shapes.smooth_union(
            0.08,
            shapes.sphere(j(0.16, 0.18), offset=(-0.25, 0.0, 0.0)),
            shapes.sphere(j(0.11, 0.12), offset=(0.02, 0.0, 0.0)),
            shapes.sphere(j(0.08, 0.09), offset=(0.33, 0.0, 0.0)),
            shapes.sphere(j(0.09, 0.10), offset=(-0.04, j(0.17, 0.19), 0.0)),
            shapes.sphere(j(0.07, 0.08), offset=(0.16, -j(0.05, 0.07), -j(0.13, 0.15))),
        )
    if kind == "torus":
        return shapes.torus(rng.uniform(0.20, 0.30), rng.uniform(0.06, 0.10))
    raise ValueError(f"unknown shape family {kind!r}")


@dataclass(frozen=True)
class CategoryConfig:
    """Category = shape distribution + pose/scale priors + camera."""

    name: str
    scale_range: tuple[float, float] = (0.08, 0.12)
    distance_range: tuple[float, float] = (0.4, 1.2)
    cam: PinholeCamera = DEFAULT_CAMERA
    view_distance: float = 0.30
    resolution: int = 64
    latent_dim: int = 8
    train_count: int = 30
    generator: str | None = None
    shape_space_path: str | None = None
    fit_seed: int = 0
    near_surface_weighting: bool = False

    def __post_init__(self):
        if self.scale_range[0] <= 0 or self.distance_range[0] <= 0:
            raise ValueError("scale and distance ranges must be positive")
        if (self.generator is None) == (self.shape_space_path is None):
            raise ValueError("exactly one of generator / shape_space_path is required")

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "scale_range": list(self.scale_range),
            "distance_range": list(self.distance_range),
            "cam": self.cam.to_dict(),
            "view_distance": self.view_distance,
            "resolution": self.resolution,
            "latent_dim": self.latent_dim,
            "train_count": self.train_count,
            "fit_seed": self.fit_seed,
            "near_surface_weighting": self.near_surface_weighting,
        }
        if self.generator is not None:
            d["generator"] = self.generator
        if self.shape_space_path is not None:
            d["shape_space_path"] = self.shape_space_path
        return d

    @staticmethod
    def from_dict(d: dict) -> "CategoryConfig":
        return CategoryConfig(
            name=d["name"],
            scale_range=tuple(d.get("scale_range", (0.08, 0.12))),
            distance_range=tuple(d.get("distance_range", (0.4, 1.2))),
            cam=PinholeCamera.from_dict(d["cam"]) if "cam" in d else DEFAULT_CAMERA,
            view_distance=d.get("view_distance", 0.30),
            resolution=d.get("resolution", 64),
            latent_dim=d.get("latent_dim", 8),
            train_count=d.get("train_count", 30),
            generator=d.get("generator"),
            shape_space_path=d.get("shape_space_path"),
            fit_seed=d.get("fit_seed", 0),
            near_surface_weighting=d.get("near_surface_weighting", False),
        )

    @staticmethod
    def load(path: str | Path) -> "CategoryConfig":
        return CategoryConfig.from_dict(json.loads(Path(path).read_text()))


def resolve_shape_space(cfg: CategoryConfig, base: Path | None = None) -> ShapeSpace:
    """Load the category's shape space, or fit one from its generator."""
    if cfg.shape_space_path is not None:
        path = Path(cfg.shape_space_path)
        if base is not None and not path.is_absolute():
            path = base / path
        return fileio.load_shape_space(path)
    rng = np.random.default_rng(cfg.fit_seed)
    vols = [
        bake(random_shape_spec(cfg.generator, rng), cfg.resolution)
        for _ in range(cfg.train_count)
    ]
    weighting = NearSurfaceWeighting() if cfg.near_surface_weighting else None
    return fit(vols, cfg.latent_dim, weighting)


def make_category(name: str, **overrides) -> CategoryConfig:
    """Built-in procedural categories."""
    presets = {
        "boxes": CategoryConfig(name="boxes", generator="box"),
        "cups": CategoryConfig(name="cups", generator="cup"),
        "bumpboxes": CategoryConfig(name="bumpboxes", generator="bumpbox"),
        "clubs": CategoryConfig(name="clubs", generator="club"),
        "tori": CategoryConfig(name="tori", generator="torus"),
    }
    if name not in presets:
        raise ValueError(f"unknown category {name!r}; have {sorted(presets)}")
    return replace(presets[name], **overrides) if overrides else presets[name]


@dataclass(frozen=True)
class AffineAugment:
    max_rotation_deg: float = 5.0
    max_translation_px: float = 3.0
    max_scale: float = 0.05


@dataclass
class SceneRecord:
    gt: Estimate
    views: list[View]
    meta: dict = field(default_factory=dict)
    # exact ground-truth volume when the scene was baked from an analytic
    # shape rather than decoded from the latent prior
    gt_volume: object = None


def sample_scene(
    category: CategoryConfig,
    space: ShapeSpace,
    rng: np.random.Generator,
    render_config: RenderConfig = RenderConfig(),
    max_tries: int = 10,
) -> SceneRecord:
    """One single-view scene with the object at a random image location.

    The world frame coincides with the camera frame (identity camera pose).
    Resamples up to ``max_tries`` times if the object renders to an empty
    mask.
    """
    cam = category.cam
    for _ in range(max_tries):
        z = rng.standard_normal(space.latent_dim)
        row = int(rng.integers(cam.height))
        col = int(rng.integers(cam.width))
        dist = rng.uniform(*category.distance_range)
        ray = cam.pixel_rays(np.array([row]), np.array([col]))[0]
        position = dist * ray
        orientation = sample_uniform(rng)
        scale = rng.uniform(*category.scale_range)
        vol = decode(space, z)
        depth, _ = render(vol, Pose(position, orientation), scale, cam, config=render_config)
        mask = depth > 0
        if mask.any():
            gt = Estimate(position=position, orientation=orientation, scale=scale, shape=z)
            view = View(depth=depth, mask=mask, cam=cam, cam_pose=Pose.identity())
            return SceneRecord(
                gt=gt,
                views=[view],
                meta={
                    "pixel": [row, col],
                    "distance": dist,
                    "distance_range": list(category.distance_range),
                },
            )
    raise DegenerateConfig(f"no nonempty mask in {max_tries} tries")


def augment_mask(
    record: SceneRecord,
    rng: np.random.Generator,
    params: AffineAugment = AffineAugment(),
    view_index: int = 0,
) -> SceneRecord:
    """Warp the mask affinely; invent outlier depths where it gained pixels."""
    view = record.views[view_index]
    mask = view.mask
    angle = np.deg2rad(rng.uniform(-params.max_rotation_deg, params.max_rotation_deg))
    trans = rng.uniform(-params.max_translation_px, params.max_translation_px, size=2)
    zoom = 1.0 + rng.uniform(-params.max_scale, params.max_scale)
    rows, cols = np.nonzero(mask)
    center = np.array([rows.mean(), cols.mean()]) if rows.size else np.zeros(2)
    c, s = np.cos(angle), np.sin(angle)
    fwd = zoom * np.array([[c, -s], [s, c]])
    inv = np.linalg.inv(fwd)
    offset = center - inv @ (center + trans)
    warped = ndimage.affine_transform(
        mask.astype(np.uint8), inv, offset=offset, order=0, mode="constant", cval=0
    ).astype(bool)

    gained = warped & ~mask
    near, far = record_distance_range(record)
    depth = np.where(warped & mask, view.depth, 0.0)
    depth[gained] = rng.uniform(near, far, size=int(gained.sum()))
    new_view = View(depth=depth, mask=warped, cam=view.cam, cam_pose=view.cam_pose)
    views = list(record.views)
    views[view_index] = new_view
    meta = dict(record.meta)
    meta.setdefault("augment", {})[f"view{view_index}"] = {
        "rotation_deg": float(np.rad2deg(angle)),
        "translation_px": trans.tolist(),
        "scale": float(zoom),
        "outliers": int(gained.sum()),
    }
    return SceneRecord(gt=record.gt, views=views, meta=meta)


def record_distance_range(record: SceneRecord) -> tuple[float, float]:
    """Outlier depth range: the category's distance prior if known, else the
    observed depth span padded by 20%."""
    if "distance_range" in record.meta:
        return tuple(record.meta["distance_range"])
    valid = [v.depth[v.depth > 0] for v in record.views if (v.depth > 0).any()]
    if not valid:
        return (0.1, 1.0)
    lo = min(float(v.min()) for v in valid)
    hi = max(float(v.max()) for v in valid)
    return (0.8 * lo, 1.2 * hi)


def flying_pixels(
    record: SceneRecord,
    rng: np.random.Generator,
    probability: float = 0.5,
    sigma: float = 1.0,
    view_index: int = 0,
) -> SceneRecord:
    """With the given probability, blur valid depths (normalized convolution
    over the nonzero support), simulating flying pixels at boundaries."""
    applied = bool(rng.uniform() < probability)
    meta = dict(record.meta)
    meta.setdefault("augment", {})[f"view{view_index}_blur"] = applied
    if not applied:
        return SceneRecord(gt=record.gt, views=list(record.views), meta=meta)
    view = record.views[view_index]
    valid = view.depth > 0
    num = ndimage.gaussian_filter(view.depth * valid, sigma)
    den = ndimage.gaussian_filter(valid.astype(np.float64), sigma)
    blurred = np.where(valid & (den > 1e-12), num / np.maximum(den, 1e-12), 0.0)
    new_view = View(depth=blurred, mask=view.mask, cam=view.cam, cam_pose=view.cam_pose)
    views = list(record.views)
    views[view_index] = new_view
    return SceneRecord(gt=record.gt, views=views, meta=meta)


_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, index: int) -> int:
    """Per-scene seed: element ``index`` of the splitmix64 stream at ``seed``.

    The derivation is ``mix(seed + (index + 1) * golden)`` with the standard
    splitmix64 finalizer, so streams from different master seeds or indices
    are decorrelated and scenes can be generated independently in any order.
    """
    x = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def multiview_scene(
    category: CategoryConfig,
    space: ShapeSpace,
    view_count: int,
    rng: np.random.Generator,
    render_config: RenderConfig = RenderConfig(),
    augment: bool = False,
    max_tries: int = 10,
    shape_source: str = "prior",
) -> SceneRecord:
    """Protocol scene: object at the world origin, cameras at
    ``view_distance`` looking at it from uniformly random orientations.

    ``shape_source`` picks where the true shape comes from: ``prior`` decodes
    a latent sample (matching the training generator), ``generator`` bakes a
    fresh analytic shape from the category family, which the shape space can
    only approximate — the realistic evaluation condition.
    """
    cam = category.cam
    for _ in range(max_tries):
        meta: dict = {"distance_range": list(category.distance_range)}
        if shape_source == "generator":
            if category.generator is None:
                raise DegenerateConfig("category has no procedural generator")
            spec = random_shape_spec(category.generator, rng)
            gt_volume = bake(spec, category.resolution)
            z = encode(space, gt_volume)  # nearest representable latent
            vol = gt_volume
            meta["shape_spec"] = spec.to_dict()
        elif shape_source == "prior":
            z = rng.standard_normal(space.latent_dim)
            gt_volume = None
            vol = decode(space, z)
        else:
            raise ValueError(f"unknown shape_source {shape_source!r}")
        orientation = sample_uniform(rng)
        scale = rng.uniform(*category.scale_range)
        gt = Estimate(position=np.zeros(3), orientation=orientation, scale=scale, shape=z)
        views = []
        for _k in range(view_count):
            q_wc = sample_uniform(rng)
            t_wc = -category.view_distance * to_matrix(q_wc)[:, 2]
            cam_pose = Pose(t_wc, q_wc)
            pose_co = cam_pose.inverse().compose(Pose(gt.position, gt.orientation))
            depth, _ = render(vol, pose_co, scale, cam, config=render_config)
            mask = depth > 0
            if not mask.any():
                break
            views.append(View(depth=depth, mask=mask, cam=cam, cam_pose=cam_pose))
        if len(views) == view_count:
            record = SceneRecord(gt=gt, views=views, meta=meta, gt_volume=gt_volume)
            if augment:
                for k in range(view_count):
                    record = augment_mask(record, rng, view_index=k)
                    record = flying_pixels(record, rng, view_index=k)
            return record
    raise DegenerateConfig(f"no all-views-nonempty scene in {max_tries} tries")


def generate_dataset(
    category: CategoryConfig,
    space: ShapeSpace,
    count: int,
    views_per_scene: int,
    seed: int,
    out_dir: str | Path,
    augment: bool = False,
    render_config: RenderConfig = RenderConfig(),
    shape_source: str = "prior",
) -> Path:
    """Write ``count`` protocol scenes and return the manifest path.

    Layout: ``scene_XXXX/depth_k.pfm``, ``scene_XXXX/mask_k.pgm``,
    ``scene_XXXX/views.json``, plus one manifest line per scene.  Scenes
    baked from the generator carry their analytic shape in the manifest so
    the exact ground-truth volume can be rebuilt.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w") as manifest:
        for i in range(count):
            rng = np.random.default_rng(splitmix64(seed, i))
            record = multiview_scene(
                category,
                space,
                views_per_scene,
                rng,
                render_config,
                augment=augment,
                shape_source=shape_source,
            )
            scene_dir = out / f"scene_{i:04d}"
            scene_dir.mkdir(exist_ok=True)
            view_docs = []
            for k, view in enumerate(record.views):
                fileio.save_pfm(scene_dir / f"depth_{k}.pfm", view.depth)
                fileio.save_pgm(scene_dir / f"mask_{k}.pgm", view.mask)
                view_docs.append(
                    fileio.view_to_dict(view, f"depth_{k}.pfm", f"mask_{k}.pgm")
                )
            fileio.save_views_manifest(scene_dir / "views.json", view_docs)
            line = {
                "scene": i,
                "dir": scene_dir.name,
                "views": [
                    {
                        "depth": f"{scene_dir.name}/depth_{k}.pfm",
                        "mask": f"{scene_dir.name}/mask_{k}.pgm",
                        "cam": v.cam.to_dict(),
                        "cam_pose": v.cam_pose.to_dict(),
                    }
                    for k, v in enumerate(record.views)
                ],
                "gt": fileio.estimate_to_dict(record.gt),
                "meta": record.meta,
            }
            manifest.write(json.dumps(line) + "\n")
    return manifest_path


def load_scene(manifest_record: dict, base: Path, resolution: int = 64) -> SceneRecord:
    """Rehydrate one manifest line into views + ground truth.

    Scenes recorded with an analytic shape re-bake their exact ground-truth
    volume.
    """
    views = [fileio.load_view(doc, base) for doc in manifest_record["views"]]
    gt = fileio.estimate_from_dict(manifest_record["gt"])
    meta = manifest_record.get("meta", {})
    gt_volume = None
    if "shape_spec" in meta:
        gt_volume = bake(shapes.ShapeSpec.from_dict(meta["shape_spec"]), resolution)
    return SceneRecord(gt=gt, views=views, meta=meta, gt_volume=gt_volume)
