"""Figure rendering for the report paths.

Every report command writes a PNG next to its delimited output.  Figures are
deliberately plain: matplotlib defaults, one chart per panel, Agg backend so
they render headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def multiview_figure(table: dict, path: str | Path) -> None:
    ks = sorted(table["k"], key=int)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    cd = [table["k"][k]["mean"]["CD_mm"] for k in ks]
    p = [table["k"][k]["mean"]["P_mm"] for k in ks]
    axes[0].plot(ks, cd, "o-", label="CD")
    axes[0].plot(ks, p, "s-", label="P")
    axes[0].set_xlabel("views")
    axes[0].set_ylabel("mm")
    axes[0].legend()
    axes[0].set_title("surface error vs views")
    p1 = [table["k"][k]["mean"]["P_1cm"] for k in ks]
    r1 = [table["k"][k]["mean"]["R_1cm"] for k in ks]
    axes[1].plot(ks, p1, "o-", label="P_1cm")
    axes[1].plot(ks, r1, "s-", label="R_1cm")
    axes[1].set_xlabel("views")
    axes[1].set_ylabel("%")
    axes[1].legend()
    axes[1].set_title("1 cm coverage vs views")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def ablation_figure(table: dict, path: str | Path) -> None:
    rows = table["rows"]
    names = list(rows)
    cd = [rows[n]["CD_mm"] for n in names]
    fig, ax = plt.subplots(figsize=(6, 0.4 * len(names) + 1.2))
    ax.barh(range(len(names)), cd)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlabel("mean CD (mm)")
    ax.set_title("ablations")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def benchmark_figure(table: dict, path: str | Path) -> None:
    rows = table["rows"]
    names = [r["stage"] for r in rows]
    times = [r["total_ms"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 0.4 * len(names) + 1.2))
    ax.barh(range(len(names)), times)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlabel("total ms")
    ax.set_title(f"runtime breakdown (total {table['total_ms']:.0f} ms)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def threshold_curves_figure(curves: dict, path: str | Path) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3))
    panels = (
        ("position_m", "position threshold (m)", "<="),
        ("orientation_deg", "orientation threshold (deg)", "<="),
        ("f_1cm", "F_1cm threshold", ">="),
    )
    for ax, (key, label, _direction) in zip(axes, panels):
        data = curves[key]
        ax.plot([d[0] for d in data], [d[1] for d in data])
        ax.set_xlabel(label)
        ax.set_ylabel("precision")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def metrics_summary_figure(per_scene: list[dict], path: str | Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    cd = [m["CD_mm"] for m in per_scene]
    pos = [m["position_error_m"] * 1000 for m in per_scene]
    axes[0].hist(cd, bins=20)
    axes[0].set_xlabel("CD (mm)")
    axes[0].set_ylabel("scenes")
    axes[1].hist(pos, bins=20)
    axes[1].set_xlabel("position error (mm)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
