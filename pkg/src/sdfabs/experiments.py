"""Experiment runners: multi-view comparison, ablations, runtime breakdown.

All runners derive per-scene RNG streams from a master seed, so tables are
byte-identical across runs.  Scene objects are drawn identically for every
view-count condition (cameras are drawn after the object), which pairs the
conditions and sharpens the comparison.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .estimator import (
    EstimateConfig,
    InitConfig,
    RefineConfig,
    estimate,
    init_grid_scoring,
    refine,
)
from .metrics import pose_metrics, recon_metrics
from .geometry import Pose
from .render import render
from .shapespace import ShapeSpace, decode
from .so3grid import OrientationGrid
from .synth import CategoryConfig, multiview_scene, splitmix64

BENCH_STAGE_ROWS = (
    ("Initialization", "init", 1),
    ("Decoding-Forward", "decode_forward", 50),
    ("Rendering-Forward", "render_forward", 50),
    ("Losses", "losses", 50),
    ("Decoding-Backward", "decode_backward", 50),
    ("Other-Backward", "other_backward", 50),
    ("Optimizer", "optimizer", 50),
)


def _scene_metrics(rec, est, space):
    gt_vol = rec.gt_volume if rec.gt_volume is not None else decode(space, rec.gt.shape)
    gt_pose = Pose(rec.gt.position, rec.gt.orientation)
    recon = recon_metrics(est, space, gt_vol, gt_pose, rec.gt.scale)
    pose = pose_metrics(est, rec.gt, recon)
    return recon, pose


def _aggregate(recons, poses) -> dict:
    return {
        "P_mm": float(np.mean([m.precision_mm for m in recons])),
        "R_mm": float(np.mean([m.recall_mm for m in recons])),
        "CD_mm": float(np.mean([m.chamfer_mm for m in recons])),
        "P_1cm": float(np.mean([m.precision_1cm for m in recons])),
        "R_1cm": float(np.mean([m.recall_1cm for m in recons])),
        "position_error_m": float(np.mean([p.position_error_m for p in poses])),
        "orientation_error_deg": float(np.mean([p.orientation_error_deg for p in poses])),
    }


def run_multiview_experiment(
    category: CategoryConfig,
    space: ShapeSpace,
    k_list: tuple[int, ...] = (1, 2, 3),
    scenes: int = 50,
    seed: int = 0,
    iterations: int = 30,
    so3_level: int = 1,
) -> dict:
    """Estimate every scene with 1..K views and aggregate surface metrics."""
    grid = OrientationGrid(so3_level)
    cfg = EstimateConfig(
        init=InitConfig(scale_bounds=category.scale_range),
        refine=RefineConfig(iterations=iterations),
    )
    table: dict = {"scenes": scenes, "seed": seed, "iterations": iterations, "k": {}}
    loss_ratios = []
    for k in k_list:
        recons, poses, per_scene = [], [], []
        for i in range(scenes):
            rng = np.random.default_rng(splitmix64(seed, i))
            rec = multiview_scene(category, space, k, rng, shape_source="generator")
            est, _init, trace = estimate(rec.views, space, grid, cfg)
            recon, pose = _scene_metrics(rec, est, space)
            recons.append(recon)
            poses.append(pose)
            per_scene.append(
                {"scene": i, **recon.to_dict(), **pose.to_dict(), "final_loss": trace.min()}
            )
            if len(trace):
                loss_ratios.append((trace[0], trace.min()))
        table["k"][str(k)] = {"mean": _aggregate(recons, poses), "per_scene": per_scene}
    if loss_ratios:
        initial, final = np.array(loss_ratios).T
        table["median_initial_loss"] = float(np.median(initial))
        table["median_final_loss"] = float(np.median(final))
    return table


ABLATION_ROWS = (
    "first_view",
    "best_view",
    "depth_only",
    "sdf_only",
    "init_only",
    "no_shape_opt",
    "mean_shape_init",
    "finer_grid",
)


def run_ablations(
    category: CategoryConfig,
    space: ShapeSpace,
    scenes: int = 50,
    seed: int = 0,
    iterations: int = 30,
    views: int = 3,
) -> dict:
    """Toggle one pipeline component at a time on a shared scene suite.

    The geometric initializer always starts from the mean shape, so the
    mean_shape_init row coincides with first_view by construction; it is
    kept so the table shape matches the configuration list.
    """
    grid = OrientationGrid(1)
    fine_grid = OrientationGrid(2)
    init_first = InitConfig(scale_bounds=category.scale_range)
    init_best = replace(init_first, view_selection="best")
    results: dict = {name: ([], []) for name in ABLATION_ROWS}
    for i in range(scenes):
        rng = np.random.default_rng(splitmix64(seed, i))
        rec = multiview_scene(category, space, views, rng, shape_source="generator")

        first = init_grid_scoring(rec.views, space, grid, init_first)
        best = init_grid_scoring(rec.views, space, grid, init_best)
        finer = init_grid_scoring(rec.views, space, fine_grid, init_first)

        def run(start, **overrides):
            cfg = RefineConfig(iterations=iterations, **overrides)
            final, _ = refine(rec.views, start, space, cfg)
            return final

        estimates = {
            "first_view": run(first.estimate),
            "best_view": run(best.estimate),
            "depth_only": run(first.estimate, lambda_sdf=0.0),
            "sdf_only": run(first.estimate, lambda_depth=0.0),
            "init_only": first.estimate,
            "no_shape_opt": run(first.estimate, freeze_shape=True),
            "finer_grid": run(finer.estimate),
        }
        estimates["mean_shape_init"] = estimates["first_view"]
        for name, est in estimates.items():
            recon, pose = _scene_metrics(rec, est, space)
            results[name][0].append(recon)
            results[name][1].append(pose)
    table = {
        "scenes": scenes,
        "seed": seed,
        "iterations": iterations,
        "views": views,
        "rows": {name: _aggregate(*results[name]) for name in ABLATION_ROWS},
    }
    return table


def run_benchmark(
    category: CategoryConfig,
    space: ShapeSpace,
    seed: int = 0,
    iterations: int = 50,
    so3_level: int = 1,
) -> dict:
    """Time the pipeline stages over one full estimate.

    Also reports the mean full-frame forward render time of the scene's
    volume at the category camera, which is the standing performance target.
    """
    grid = OrientationGrid(so3_level)
    rng = np.random.default_rng(splitmix64(seed, 0))
    rec = multiview_scene(category, space, 1, rng)

    timings: dict = {}
    t_total0 = time.perf_counter()
    t0 = time.perf_counter()
    init = init_grid_scoring(
        rec.views, space, grid, InitConfig(scale_bounds=category.scale_range)
    )
    timings["init"] = time.perf_counter() - t0
    refine(
        rec.views,
        init.estimate,
        space,
        RefineConfig(iterations=iterations),
        timings=timings,
    )
    total = time.perf_counter() - t_total0

    rows = []
    accounted = 0.0
    for label, key, calls in BENCH_STAGE_ROWS:
        t = timings.get(key, 0.0)
        accounted += t
        rows.append(
            {
                "stage": f"{label} (x{calls})",
                "total_ms": t * 1000.0,
                "percent": 100.0 * t / total,
                "per_call_ms": t * 1000.0 / calls,
            }
        )
    # full-frame render target, measured separately
    vol = decode(space, rec.gt.shape)
    pose_co = rec.gt.object_in_camera(rec.views[0])
    render(vol, pose_co, rec.gt.scale, rec.views[0].cam)  # warm
    samples = []
    for _ in range(5):
        t0 = time.perf_counter()
        render(vol, pose_co, rec.gt.scale, rec.views[0].cam)
        samples.append(time.perf_counter() - t0)
    return {
        "iterations": iterations,
        "total_ms": total * 1000.0,
        "accounted_ms": accounted * 1000.0,
        "unaccounted_percent": 100.0 * (total - accounted) / total,
        "rows": rows,
        "full_frame_render_ms": float(np.median(samples) * 1000.0),
        "image": [rec.views[0].cam.width, rec.views[0].cam.height],
    }


def threshold_sweep(per_scene: list[dict]) -> dict:
    """Precision-vs-threshold curves over per-scene metrics."""
    pos = np.array([m["position_error_m"] for m in per_scene])
    ang = np.array([m["orientation_error_deg"] for m in per_scene])
    f = np.array([m["f_1cm"] if m.get("f_1cm") is not None else 0.0 for m in per_scene])
    curves = {"position_m": [], "orientation_deg": [], "f_1cm": []}
    for d in np.linspace(0.0, 0.05, 26):
        curves["position_m"].append([float(d), float((pos <= d).mean())])
    for a in np.linspace(0.0, 20.0, 21):
        curves["orientation_deg"].append([float(a), float((ang <= a).mean())])
    for t in np.linspace(0.0, 1.0, 21):
        curves["f_1cm"].append([float(t), float((f >= t).mean())])
    return curves


def format_table(rows: dict, columns: tuple[str, ...]) -> str:
    """Aligned-text rendering of {row_name: {column: value}}."""
    name_w = max(len(n) for n in rows) + 2
    col_w = 10
    header = " " * name_w + "".join(c.rjust(col_w) for c in columns)
    lines = [header]
    for name, values in rows.items():
        cells = "".join(
            f"{values[c]:.3f}".rjust(col_w) if isinstance(values[c], float) else str(values[c]).rjust(col_w)
            for c in columns
        )
        lines.append(name.ljust(name_w) + cells)
    return "\n".join(lines)


def write_table(out_dir: str | Path, name: str, table: dict, text: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(table, indent=2))
    (out / f"{name}.txt").write_text(text + "\n")
