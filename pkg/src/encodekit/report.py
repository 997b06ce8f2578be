"""CSV tables and SVG bar charts for contrast results."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .stats import ContrastResult  # noqa: E402


def write_contrast_csv(result: ContrastResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["roi", "mean_percent_change", "sem", "n_participants",
                         "n_voxels", "n_excluded", "voxel_selection", "reference_model_tag"])
        for row in result.rows:
            writer.writerow([row.roi_name, f"{row.mean_percent_change:.6f}",
                             f"{row.sem:.6f}", row.n_participants, row.n_voxels,
                             row.n_excluded, result.voxel_selection,
                             result.reference_model_tag])


def contrast_bar_chart(result: ContrastResult, path, title: str) -> None:
    """One bar per ROI with an SEM error bar, written as SVG."""
    rows = [r for r in result.rows if math.isfinite(r.mean_percent_change)]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * max(1, len(rows))), 3.6))
    if rows:
        names = [r.roi_name for r in rows]
        means = [r.mean_percent_change for r in rows]
        sems = [r.sem if math.isfinite(r.sem) else 0.0 for r in rows]
        ax.bar(names, means, yerr=sems, capsize=4, color="#4878a8")
        ax.axhline(0.0, color="black", linewidth=0.8)
    else:
        ax.text(0.5, 0.5, "no ROI had selected voxels", ha="center", va="center",
                transform=ax.transAxes)
    ax.set_ylabel("% change in alignment")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path), format="svg")
    plt.close(fig)


def write_perplexity_csv(rows: list[dict], path) -> None:
    """Rows: {condition, model_tag, scramble_tag, scope, perplexity}."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["condition", "model_tag", "scramble_tag",
                                                "scope", "perplexity"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "perplexity": f"{row['perplexity']:.6f}"})


def write_summary_csv(rows: list[dict], path) -> None:
    """Fold-level summary: one row per (condition, participant, heldout run)."""
    fields = ["condition", "model_tag", "scramble_tag", "participant", "heldout_run",
              "mean_correlation", "n_significant", "n_voxels", "learning_rate",
              "weight_decay", "epochs_trained"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
