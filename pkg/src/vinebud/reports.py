"""Report rendering: delimited tables plus figures written to disk.

Every artifact comes in two forms that always agree: a versioned
tab-separated table for downstream tooling and a rendered PNG for eyes.
Figures use the Agg backend so reports work on headless machines.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

from .evaluation import METRIC_NAMES, Heatmap, Metrics
from .scanwin import ClassifiedWindow

_FLOAT = "%.6f"


def _table(header: str, columns: Sequence[str], rows) -> str:
    lines = [f"# {header} 1", "\t".join(columns)]
    for row in rows:
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def format_metrics_table(per_rep: Sequence[Metrics]) -> str:
    """Per-repetition metric rows followed by mean and sample-SD rows."""
    rows = []
    for i, m in enumerate(per_rep):
        rows.append([str(i)] + [_FLOAT % getattr(m, n) for n in METRIC_NAMES])
    values = np.array([[getattr(m, n) for n in METRIC_NAMES] for m in per_rep])
    rows.append(["mean"] + [_FLOAT % v for v in values.mean(axis=0)])
    sd = values.std(axis=0, ddof=1) if len(per_rep) > 1 else np.zeros(len(METRIC_NAMES))
    rows.append(["sd"] + [_FLOAT % v for v in sd])
    return _table("vinebud-metrics", ("rep", *METRIC_NAMES), rows)


def render_metrics_figure(per_rep: Sequence[Metrics], path) -> None:
    """Bar chart of metric means with sample-SD error bars."""
    values = np.array([[getattr(m, n) for n in METRIC_NAMES] for m in per_rep])
    means = values.mean(axis=0)
    sd = values.std(axis=0, ddof=1) if len(per_rep) > 1 else np.zeros(len(METRIC_NAMES))
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    xs = np.arange(len(METRIC_NAMES))
    ax.bar(xs, means, yerr=sd, capsize=4, color="0.55", edgecolor="black")
    ax.set_xticks(xs)
    ax.set_xticklabels([n.replace("_", " ") for n in METRIC_NAMES])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"test metrics over {len(per_rep)} repetitions")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def format_heatmap_table(hm: Heatmap) -> str:
    """One row per grid cell: band edges, generated count, mean recall."""
    rows = []
    for i in range(hm.recall.shape[0]):
        for j in range(hm.recall.shape[1]):
            recall = "nan" if hm.discarded[i, j] else _FLOAT % hm.recall[i, j]
            rows.append(
                [
                    "%g" % hm.kept_edges[i],
                    "%g" % hm.kept_edges[i + 1],
                    "%g" % hm.relative_edges[j],
                    "%g" % hm.relative_edges[j + 1],
                    str(int(hm.counts[i, j])),
                    recall,
                ]
            )
    columns = ("kept_lo", "kept_hi", "relative_lo", "relative_hi", "count", "recall")
    return _table("vinebud-heatmap", columns, rows)


def render_heatmap_figure(hm: Heatmap, path) -> None:
    """Grayscale recall grid; discarded cells drawn black."""
    shaded = np.ma.masked_where(hm.discarded, hm.recall)
    cmap = plt.get_cmap("gray").copy()
    cmap.set_bad("black")
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    im = ax.imshow(
        shaded,
        cmap=cmap,
        vmin=0.0,
        vmax=1.0,
        origin="lower",
        extent=(
            float(hm.relative_edges[0]),
            float(hm.relative_edges[-1]),
            float(hm.kept_edges[0]),
            float(hm.kept_edges[-1]),
        ),
    )
    ax.set_xlabel("bud share of window (%)")
    ax.set_ylabel("bud pixels kept (%)")
    ax.set_title("mean recall per perturbation cell")
    fig.colorbar(im, ax=ax, label="recall")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def format_windows_table(windows: Sequence[ClassifiedWindow]) -> str:
    """One row per scanned window with its classification."""
    rows = []
    for w in windows:
        rows.append(
            [
                str(w.rect.x),
                str(w.rect.y),
                str(w.rect.w),
                str(w.rect.h),
                w.label,
                _FLOAT % w.decision,
                str(w.keypoint_count),
            ]
        )
    columns = ("x", "y", "w", "h", "label", "decision", "keypoints")
    return _table("vinebud-windows", columns, rows)


def render_scan_figure(
    image: np.ndarray, windows: Sequence[ClassifiedWindow], path, positive: str = "bud"
) -> None:
    """Source image with every positive window outlined."""
    fig, ax = plt.subplots(figsize=(6.0, 6.0 * image.shape[0] / image.shape[1]))
    ax.imshow(image, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    for w in windows:
        if w.label != positive:
            continue
        ax.add_patch(
            Rectangle(
                (w.rect.x - 0.5, w.rect.y - 0.5),
                w.rect.w,
                w.rect.h,
                fill=False,
                edgecolor="red",
                linewidth=1.2,
            )
        )
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_metrics_report(per_rep: Sequence[Metrics], out_dir) -> dict[str, Path]:
    """Write metrics.tsv and metrics.png under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "metrics.tsv"
    figure = out_dir / "metrics.png"
    table.write_text(format_metrics_table(per_rep))
    render_metrics_figure(per_rep, figure)
    return {"table": table, "figure": figure}


def write_heatmap_report(hm: Heatmap, out_dir) -> dict[str, Path]:
    """Write heatmap.tsv and heatmap.png under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "heatmap.tsv"
    figure = out_dir / "heatmap.png"
    table.write_text(format_heatmap_table(hm))
    render_heatmap_figure(hm, figure)
    return {"table": table, "figure": figure}


def write_scan_report(
    image: np.ndarray, windows: Sequence[ClassifiedWindow], out_dir
) -> dict[str, Path]:
    """Write windows.tsv and overlay.png under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "windows.tsv"
    figure = out_dir / "overlay.png"
    table.write_text(format_windows_table(windows))
    render_scan_figure(image, windows, figure)
    return {"table": table, "figure": figure}
