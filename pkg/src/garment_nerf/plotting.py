"""Figures written next to the CSV outputs (training curves, metric reports, ablations)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_training_curves(rows: list, path, window: int = 100, terms=("img", "vgg", "sp", "off", "p")) -> Path:
    """Total loss (raw and smoothed), per-term losses and the learning rate against iteration."""
    from .training import smoothed

    it = np.array([r["iteration"] for r in rows])
    fig, axes = plt.subplots(1, 3, figsize=(14, 3.8))
    total = np.array([r["total"] for r in rows])
    axes[0].plot(it, total, lw=0.5, alpha=0.4, label="total")
    axes[0].plot(it, smoothed(total, window), lw=1.5, label=f"total, {window}-iter mean")
    axes[0].set_yscale("log")
    axes[0].set_title("training loss")
    axes[0].legend()
    for t in terms:
        if rows and t in rows[0]:
            vals = np.array([r[t] for r in rows])
            axes[1].plot(it, smoothed(np.maximum(vals, 1e-12), window), label=t)
    axes[1].set_yscale("log")
    axes[1].set_title("loss terms (smoothed)")
    axes[1].legend(fontsize=8)
    if rows and "lr" in rows[0]:
        axes[2].plot(it, [r["lr"] for r in rows])
        axes[2].set_yscale("log")
    axes[2].set_title("learning rate")
    for ax in axes:
        ax.set_xlabel("iteration")
    return _save(fig, path)


def plot_generator_history(history: list, path) -> Path:
    """history: (step, l1, total) tuples from generator pre-training."""
    from .training import smoothed

    h = np.asarray(history, dtype=np.float64).reshape(-1, 3)
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(h[:, 0], smoothed(h[:, 1], 50), label="L1")
    ax.plot(h[:, 0], smoothed(h[:, 2], 50), label="L1 + perceptual")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_title("image generator pre-training")
    ax.legend()
    return _save(fig, path)


def plot_report(report, path) -> Path:
    """One panel per metric; grouped bars of split x method."""
    metrics = []
    for r in report.rows:
        if r["metric"] not in metrics:
            metrics.append(r["metric"])
    splits = sorted({r["split"] for r in report.rows})
    methods = sorted({r["method"] for r in report.rows}, key=lambda m: (m != "ours", m))
    fig, axes = plt.subplots(1, max(1, len(metrics)), figsize=(4 * max(1, len(metrics)), 3.6), squeeze=False)
    width = 0.8 / max(1, len(methods))
    for ax, metric in zip(axes[0], metrics):
        for k, method in enumerate(methods):
            vals = []
            for s in splits:
                try:
                    vals.append(report.value(s, method, metric))
                except KeyError:
                    vals.append(np.nan)
            ax.bar(np.arange(len(splits)) + k * width, vals, width, label=method)
        ax.set_xticks(np.arange(len(splits)) + width * (len(methods) - 1) / 2)
        ax.set_xticklabels(splits, rotation=20, fontsize=8)
        ax.set_title(metric)
    axes[0][0].legend(fontsize=8)
    return _save(fig, path)


def plot_ablation(bundle, path, metric: str = "psnr") -> Path:
    """One panel per study with the chosen metric for each setting; failed cells are left empty."""
    studies = []
    for r in bundle.rows:
        if r["study"] not in studies:
            studies.append(r["study"])
    fig, axes = plt.subplots(1, max(1, len(studies)), figsize=(4.5 * max(1, len(studies)), 3.6), squeeze=False)
    for ax, study in zip(axes[0], studies):
        rows = [r for r in bundle.table(study) if r["metric"] == metric]
        labels = [r["setting"] for r in rows]
        vals = [r["value"] for r in rows]
        ax.bar(np.arange(len(rows)), vals, color="tab:blue")
        ax.set_xticks(np.arange(len(rows)))
        ax.set_xticklabels(labels, rotation=25, fontsize=7, ha="right")
        ax.set_title(f"{study}: {metric}")
    return _save(fig, path)


def save_image(image: np.ndarray, path) -> Path:
    """(H, W, 3) float image in [0, 1] -> PNG."""
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
    return path


def plot_recolor(pairs: list, path, max_frames: int = 6) -> Path:
    """pairs: (frame index, original image, recoloured image); originals on top, edits below."""
    pairs = pairs[:max_frames]
    n = max(1, len(pairs))
    fig, axes = plt.subplots(2, n, figsize=(2.4 * n, 5.0), squeeze=False)
    for k, (t, a, b) in enumerate(pairs):
        axes[0][k].imshow(np.clip(a, 0, 1))
        axes[1][k].imshow(np.clip(b, 0, 1))
        axes[0][k].set_title(f"frame {t}", fontsize=8)
    for ax in axes.ravel():
        ax.axis("off")
    axes[0][0].text(-0.1, 0.5, "original", transform=axes[0][0].transAxes, rotation=90, va="center", ha="right")
    axes[1][0].text(-0.1, 0.5, "recoloured", transform=axes[1][0].transAxes, rotation=90, va="center", ha="right")
    return _save(fig, path)
