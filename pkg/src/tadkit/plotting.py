"""Figures written next to the CLI's tabular outputs."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes reproducible across runs
_PNG_META = {"Software": None}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path):
    fig.savefig(path, metadata=_PNG_META, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_map_vs_tiou(report, path):
    """mAP (%) at each tIoU threshold, with the average as a dashed line."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        t = np.asarray(report.thresholds)
        ax.plot(t, 100 * np.asarray(report.map_per_threshold), marker="o", lw=1.5, color="C0", label="mAP")
        ax.axhline(100 * report.average_map, ls="--", lw=1, color="C3",
                   label=f"average {100 * report.average_map:.2f}")
        ax.set_xlabel("tIoU threshold")
        ax.set_ylabel("mAP (%)")
        ax.set_ylim(0, 100)
        ax.set_xticks(t)
        ax.tick_params(axis="x", rotation=45)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_per_class_ap(report, path, max_classes=50):
    """Heat map of AP per class (rows) and threshold (columns).

    Only classes with ground truth are drawn; above ``max_classes`` the
    lowest average-AP classes are kept.
    """
    present = np.flatnonzero(report.num_gt > 0)
    ap = report.per_class_ap[present]
    if len(present) > max_classes:
        keep = np.argsort(ap.mean(axis=1), kind="stable")[:max_classes]
        present, ap = present[keep], ap[keep]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 1.0 + 0.18 * max(len(present), 1)))
        im = ax.imshow(100 * ap if len(present) else np.zeros((1, len(report.thresholds))),
                       aspect="auto", vmin=0, vmax=100, cmap="viridis", interpolation="nearest")
        ax.set_xticks(range(len(report.thresholds)))
        ax.set_xticklabels([f"{t:.2f}" for t in report.thresholds], rotation=45)
        ax.set_yticks(range(len(present)))
        ax.set_yticklabels([report.labels.name(c) for c in present])
        ax.set_xlabel("tIoU threshold")
        fig.colorbar(im, ax=ax, label="AP (%)")
        return _save(fig, path)


def plot_confidence_map(cmap, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        d, t = cmap.shape
        im = ax.imshow(cmap.grid, origin="lower", aspect="auto", vmin=0, vmax=1, cmap="magma",
                       extent=(0, t * cmap.stride, cmap.stride, (d + 1) * cmap.stride))
        ax.set_xlabel("start (s)")
        ax.set_ylabel("duration (s)")
        ax.set_title(cmap.video_id)
        fig.colorbar(im, ax=ax, label="confidence")
        return _save(fig, path)


def write_report_figures(report, out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    return [
        plot_map_vs_tiou(report, os.path.join(out_dir, "map_vs_tiou.png")),
        plot_per_class_ap(report, os.path.join(out_dir, "per_class_ap.png")),
    ]
