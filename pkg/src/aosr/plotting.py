"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .synth import phi_preview  # noqa: E402


def _figure(width=7.0, height=None, ncols=1, nrows=1):
    golden_ratio = (np.sqrt(5) - 1.0) / 2.0
    if height is None:
        height = width * golden_ratio
    fig, axes = plt.subplots(nrows, ncols, figsize=(width, height), squeeze=False)
    for ax in axes.flat:
        ax.tick_params(labelsize=9)
    return fig, axes


def plot_training_curve(log, path):
    """Per-step total loss with its L1 and contrastive parts, log scale."""
    steps = [r["step"] for r in log.rows]
    fig, axes = _figure()
    ax = axes[0, 0]
    ax.plot(steps, [r["total"] for r in log.rows], label="total", lw=1.5)
    ax.plot(steps, [r["l1"] for r in log.rows], label="L1", lw=1.0, alpha=0.8)
    ax.plot(steps, [r["lc"] for r in log.rows], label="contrastive", lw=1.0, alpha=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metric_report(rows, path, has_degraded=True):
    """Bar chart of per-image PSNR, SSIM and CIEDE2000."""
    ids = [r["id"] for r in rows]
    x = np.arange(len(ids))
    fig, axes = _figure(width=max(7.0, 0.35 * len(ids) + 3), height=6.5, nrows=3)
    for ax, metric, label in zip(axes[:, 0], ("psnr", "ssim", "ciede2000"), ("PSNR [dB]", "SSIM", "CIEDE2000")):
        if has_degraded:
            ax.bar(x - 0.2, [r[f"{metric}_restored"] for r in rows], 0.4, label="restored")
            ax.bar(x + 0.2, [r[f"{metric}_degraded"] for r in rows], 0.4, label="degraded")
        else:
            ax.bar(x, [r[f"{metric}_restored"] for r in rows], 0.6, label="prediction")
        ax.set_ylabel(label, fontsize=9)
        ax.set_xticks(x)
        ax.set_xticklabels(ids if len(ids) <= 40 else [""] * len(ids), rotation=90, fontsize=7)
    axes[0, 0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_triples(triples, path, n=4):
    """Grid of clear image, normalised phi and degraded image per row."""
    triples = list(triples)[:n]
    fig, axes = _figure(width=6.0, height=2.0 * len(triples), ncols=3, nrows=len(triples))
    for row, t in zip(axes, triples):
        for ax, img, title in zip(row, (t.j_s, phi_preview(t.phi), t.i_s), ("clear", "phi", "sandstorm")):
            ax.imshow(np.clip(img, 0, 1))
            ax.set_title(title, fontsize=9)
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
