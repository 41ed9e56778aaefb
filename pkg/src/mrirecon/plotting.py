"""Matplotlib figures for training logs and evaluation reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import magnitude01  # noqa: E402

LOSS_KEYS = ("g_total", "d_loss", "rec", "adv_g", "cyc", "vgg", "dc")


def _smooth(v: np.ndarray, width: int) -> np.ndarray:
    if width <= 1 or len(v) < width:
        return v
    k = np.ones(width) / width
    return np.convolve(v, k, mode="valid")


def plot_losses(rows: list[dict], path, smooth: int = 25) -> Path:
    """One panel per loss component, raw values faint and a moving average on top."""
    keys = [k for k in LOSS_KEYS if rows and k in rows[0]]
    fig, axes = plt.subplots(len(keys), 1, figsize=(7, 1.8 * len(keys)), sharex=True)
    axes = np.atleast_1d(axes)
    steps = np.array([r["step"] for r in rows])
    for ax, k in zip(axes, keys):
        v = np.array([r[k] for r in rows])
        ax.plot(steps, v, lw=0.5, alpha=0.35, color="tab:blue")
        sm = _smooth(v, smooth)
        ax.plot(steps[len(steps) - len(sm):], sm, lw=1.2, color="tab:blue")
        ax.set_ylabel(k)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_metric_bars(report, path) -> Path:
    """Mean PSNR / SSIM / MS-SSIM / KID per method side by side."""
    methods = list(report.per_sample)
    metrics = [("psnr", "PSNR (dB)"), ("ssim", "SSIM"), ("ms_ssim", "MS-SSIM"), ("kid", "KID")]
    fig, axes = plt.subplots(1, len(metrics), figsize=(3 * len(metrics), 3))
    colors = ["tab:green", "tab:gray"] + ["tab:blue"] * max(0, len(methods) - 2)
    for ax, (key, label) in zip(axes, metrics):
        if key == "kid":
            vals = [report.kid[m] for m in methods]
            err = None
        else:
            vals = [report.means[m][key] for m in methods]
            err = [np.std(report.per_sample[m][key]) for m in methods]
            if any(np.isinf(vals)):
                err = None
        ax.bar(methods, vals, yerr=err, color=colors[:len(methods)], capsize=3)
        ax.set_title(label)
        ax.tick_params(axis="x", rotation=20)
    fig.suptitle(f"{report.count} held-out samples")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_examples(reference, zero_filled, recon, indices, path, count: int = 4) -> Path:
    """Rows of ground truth, zero-filled, reconstruction and |error| magnitude images."""
    ref, zf, rc = magnitude01(reference), magnitude01(zero_filled), magnitude01(recon)
    n = min(count, len(ref))
    fig, axes = plt.subplots(n, 4, figsize=(8, 2.1 * n), squeeze=False)
    titles = ("ground truth", "zero-filled", "reconstruction", "|error| x4")
    for i in range(n):
        err = np.clip(4 * np.abs(rc[i, 0] - ref[i, 0]), 0, 1)
        for j, img in enumerate((ref[i, 0], zf[i, 0], rc[i, 0], err)):
            ax = axes[i, j]
            ax.imshow(img, cmap="gray", vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(titles[j], fontsize=9)
        axes[i, 0].set_ylabel(f"#{indices[i]}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
