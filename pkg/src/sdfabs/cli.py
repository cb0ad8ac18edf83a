"""Command-line front end.

Commands mirror the pipeline: ``bake`` analytic shapes into volumes, ``fit``
a shape space, ``synth`` datasets, ``render`` depth maps, ``estimate`` pose,
scale, and shape, ``eval``/``ablate``/``bench`` experiment tables, and
``plot-data`` precision curves.  Report commands write a PNG figure next to
their JSON/text/CSV output.

Exit codes: 0 success, 1 data errors, 2 usage errors.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import fileio, figures
from .errors import SdfabsError
from .estimator import EstimateConfig, InitConfig, RefineConfig, estimate
from .experiments import (
    format_table,
    run_ablations,
    run_benchmark,
    run_multiview_experiment,
    threshold_sweep,
    write_table,
)
from .geometry import PinholeCamera, Pose
from .metrics import pose_metrics, recon_metrics
from .render import RenderConfig, render
from .shapes import ShapeSpec
from .shapespace import NearSurfaceWeighting, decode, fit
from .so3grid import OrientationGrid
from .synth import CategoryConfig, generate_dataset, make_category, resolve_shape_space
from .volume import bake


def handle_data_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except SdfabsError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(1)
        except OSError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(1)

    return wrapper


def load_category(spec: str) -> CategoryConfig:
    """A built-in category name or a path to a category JSON file."""
    path = Path(spec)
    if path.exists():
        return CategoryConfig.load(path)
    return make_category(spec)


@click.group()
@click.option("--threads", type=int, default=None, help="Worker threads for rendering.")
@click.option("--seed", type=int, default=0, show_default=True, help="Master random seed.")
@click.pass_context
def main(ctx, threads, seed):
    """Pose, scale, and shape estimation over discretized signed distance fields."""
    if threads is not None:
        import numba

        numba.set_num_threads(threads)
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed


@main.command("bake")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--res", default=64, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@handle_data_errors
def bake_cmd(spec_path, res, out):
    """Bake an analytic shape description into a volume file."""
    spec = ShapeSpec.from_json(Path(spec_path).read_text())
    fileio.save_volume(out, bake(spec, res))
    click.echo(f"baked {out} at R={res}")


@main.command("fit")
@click.option("--vols", required=True, type=click.Path(exists=True), help="Directory of .sdfv files.")
@click.option("--latent", default=8, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--near-delta", type=float, default=None, help="Near-surface band half width.")
@click.option("--near-weight", type=float, default=None, help="Weight inside the band.")
@handle_data_errors
def fit_cmd(vols, latent, out, near_delta, near_weight):
    """Fit a shape space to a directory of volumes."""
    paths = sorted(Path(vols).glob("*.sdfv"))
    if len(paths) < latent + 1:
        raise SdfabsError(f"found {len(paths)} volumes in {vols}, need >= {latent + 1}")
    volumes = [fileio.load_volume(p) for p in paths]
    weighting = None
    if near_delta is not None or near_weight is not None:
        weighting = NearSurfaceWeighting(
            delta=near_delta if near_delta is not None else 0.05,
            weight=near_weight if near_weight is not None else 4.0,
        )
    space = fit(volumes, latent, weighting)
    fileio.save_shape_space(out, space)
    click.echo(f"fitted {out} from {len(paths)} volumes, N={latent}")


@main.command("synth")
@click.option("--category", required=True, help="Built-in name or category JSON path.")
@click.option("--count", default=200, show_default=True, type=int)
@click.option("--views", default=1, show_default=True, type=int)
@click.option("--seed", type=int, default=None, help="Overrides the global seed.")
@click.option("--out", required=True, type=click.Path())
@click.option("--augment/--no-augment", default=False, show_default=True)
@click.pass_context
@handle_data_errors
def synth_cmd(ctx, category, count, views, seed, out, augment):
    """Generate a synthetic dataset with ground truth."""
    cfg = load_category(category)
    space = resolve_shape_space(cfg)
    seed = ctx.obj["seed"] if seed is None else seed
    manifest = generate_dataset(cfg, space, count, views, seed, out, augment=augment)
    click.echo(f"wrote {count} scenes to {manifest}")


@main.command("render")
@click.option("--vol", "vol_path", required=True, type=click.Path(exists=True))
@click.option("--pose", "pose_path", required=True, type=click.Path(exists=True))
@click.option("--scale", required=True, type=float)
@click.option("--cam", "cam_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--mask", "mask_path", type=click.Path(exists=True), default=None)
@click.option("--step-factor", default=0.9, show_default=True, type=float)
@click.option("--eps-hit-voxels", default=0.5, show_default=True, type=float)
@click.option("--max-steps", default=96, show_default=True, type=int)
@handle_data_errors
def render_cmd(vol_path, pose_path, scale, cam_path, out, mask_path, step_factor, eps_hit_voxels, max_steps):
    """Render the depth map of a posed, scaled volume."""
    vol = fileio.load_volume(vol_path)
    pose = Pose.from_dict(json.loads(Path(pose_path).read_text()))
    cam = PinholeCamera.from_dict(json.loads(Path(cam_path).read_text()))
    mask = fileio.load_pgm(mask_path) if mask_path else None
    config = RenderConfig(
        step_factor=step_factor, eps_hit_voxels=eps_hit_voxels, max_steps=max_steps
    )
    depth, info = render(vol, pose, scale, cam, mask=mask, config=config)
    fileio.save_pfm(out, depth)
    click.echo(f"rendered {out}: {info.hit_count} hit pixels")


@main.command("estimate")
@click.option("--shape-space", "space_path", required=True, type=click.Path(exists=True))
@click.option("--views", "views_path", required=True, type=click.Path(exists=True))
@click.option("--iters", default=50, show_default=True, type=int)
@click.option("--so3-level", default=1, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--scale-bounds", type=(float, float), default=None)
@click.option("--view-selection", type=click.Choice(["first", "best"]), default="first", show_default=True)
@click.option("--lambda-sdf", default=1.0, show_default=True, type=float)
@click.option("--lambda-depth", default=1.0, show_default=True, type=float)
@click.option("--skip-refine", is_flag=True, default=False)
@click.option("--freeze-shape", is_flag=True, default=False)
@handle_data_errors
def estimate_cmd(
    space_path, views_path, iters, so3_level, out, scale_bounds,
    view_selection, lambda_sdf, lambda_depth, skip_refine, freeze_shape,
):
    """Estimate pose, scale, and shape from one or more views."""
    space = fileio.load_shape_space(space_path)
    views = fileio.load_views_manifest(views_path)
    cfg = EstimateConfig(
        init=InitConfig(scale_bounds=scale_bounds, view_selection=view_selection),
        refine=RefineConfig(
            iterations=iters,
            lambda_sdf=lambda_sdf,
            lambda_depth=lambda_depth,
            freeze_shape=freeze_shape,
        ),
        skip_refine=skip_refine,
    )
    final, init, trace = estimate(views, space, OrientationGrid(so3_level), cfg)
    fileio.save_estimate(
        out,
        final,
        best_cell=init.best_cell,
        max_prob=float(init.orientation_distribution.max()),
        loss_trace=trace,
    )
    click.echo(f"wrote {out}")


@main.group("eval")
def eval_group():
    """Metric evaluation and the multi-view experiment."""


@eval_group.command("metrics")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--estimates", "est_dir", required=True, type=click.Path(exists=True))
@click.option("--shape-space", "space_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@handle_data_errors
def eval_metrics_cmd(manifest, est_dir, space_path, out):
    """Score per-scene estimate files against dataset ground truth.

    Estimates are looked up as est_<scene>.json in the estimates directory.
    """
    space = fileio.load_shape_space(space_path)
    base = Path(manifest).parent
    per_scene = []
    for record in fileio.load_dataset_manifest(manifest):
        est_path = Path(est_dir) / f"est_{record['scene']:04d}.json"
        if not est_path.exists():
            continue
        est = fileio.load_estimate(est_path)
        gt = fileio.estimate_from_dict(record["gt"])
        gt_vol = decode(space, gt.shape)
        recon = recon_metrics(
            est, space, gt_vol, Pose(gt.position, gt.orientation), gt.scale
        )
        pose = pose_metrics(est, gt, recon)
        per_scene.append({"scene": record["scene"], **recon.to_dict(), **pose.to_dict()})
    if not per_scene:
        raise SdfabsError(f"no est_*.json found in {est_dir}")
    summary = {
        key: float(np.mean([m[key] for m in per_scene]))
        for key in ("P_mm", "R_mm", "CD_mm", "P_1cm", "R_1cm", "position_error_m", "orientation_error_deg")
    }
    doc = {"summary": summary, "per_scene": per_scene}
    Path(out).write_text(json.dumps(doc, indent=2))
    figures.metrics_summary_figure(per_scene, Path(out).with_suffix(".png"))
    click.echo(json.dumps(summary, indent=2))


@eval_group.command("multiview")
@click.option("--category", required=True)
@click.option("--scenes", default=50, show_default=True, type=int)
@click.option("--k", "k_list", default="1,2,3", show_default=True)
@click.option("--iters", default=30, show_default=True, type=int)
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
@handle_data_errors
def eval_multiview_cmd(ctx, category, scenes, k_list, iters, seed, out):
    """Run the view-count comparison and write its table and figure."""
    cfg = load_category(category)
    space = resolve_shape_space(cfg)
    seed = ctx.obj["seed"] if seed is None else seed
    ks = tuple(int(k) for k in k_list.split(","))
    table = run_multiview_experiment(cfg, space, ks, scenes, seed, iters)
    text = format_table(
        {f"K={k}": table["k"][k]["mean"] for k in table["k"]},
        ("P_mm", "CD_mm", "P_1cm", "R_1cm"),
    )
    write_table(out, "multiview", table, text)
    figures.multiview_figure(table, Path(out) / "multiview.png")
    click.echo(text)


@main.command("ablate")
@click.option("--category", required=True)
@click.option("--scenes", default=50, show_default=True, type=int)
@click.option("--iters", default=30, show_default=True, type=int)
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
@handle_data_errors
def ablate_cmd(ctx, category, scenes, iters, seed, out):
    """Run the configuration ablations and write their table and figure."""
    cfg = load_category(category)
    space = resolve_shape_space(cfg)
    seed = ctx.obj["seed"] if seed is None else seed
    table = run_ablations(cfg, space, scenes, seed, iters)
    text = format_table(table["rows"], ("P_mm", "CD_mm", "P_1cm", "R_1cm"))
    write_table(out, "ablations", table, text)
    figures.ablation_figure(table, Path(out) / "ablations.png")
    click.echo(text)


@main.command("bench")
@click.option("--category", required=True)
@click.option("--iters", default=50, show_default=True, type=int)
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
@handle_data_errors
def bench_cmd(ctx, category, iters, seed, out):
    """Time the pipeline stages and write the breakdown."""
    cfg = load_category(category)
    space = resolve_shape_space(cfg)
    seed = ctx.obj["seed"] if seed is None else seed
    table = run_benchmark(cfg, space, seed, iters)
    rows = {r["stage"]: r for r in table["rows"]}
    text = format_table(rows, ("total_ms", "percent", "per_call_ms"))
    text += f"\n\nTotal {table['total_ms']:.1f} ms"
    text += f"\nFull-frame render {table['full_frame_render_ms']:.1f} ms"
    write_table(out, "benchmark", table, text)
    figures.benchmark_figure(table, Path(out) / "benchmark.png")
    click.echo(text)


@main.command("plot-data")
@click.option("--metrics", "metrics_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@handle_data_errors
def plot_data_cmd(metrics_path, out):
    """Emit precision-vs-threshold curves as CSV plus a rendered figure."""
    doc = json.loads(Path(metrics_path).read_text())
    per_scene = doc["per_scene"] if "per_scene" in doc else doc
    curves = threshold_sweep(per_scene)
    out = Path(out)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "threshold", "precision"])
        for kind, rows in curves.items():
            for threshold, precision in rows:
                writer.writerow([kind, f"{threshold:.6g}", f"{precision:.6g}"])
    figures.threshold_curves_figure(curves, out.with_suffix(".png"))
    click.echo(f"wrote {out} and {out.with_suffix('.png')}")


if __name__ == "__main__":
    main()
