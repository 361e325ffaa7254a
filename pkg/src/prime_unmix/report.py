"""Matplotlib rendering of evaluation artifacts to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_signature_figure", "save_abundance_figure",
           "save_diagnostics_figure"]


def save_signature_figure(b_gt, b_est, method, path, dpi=150):
    """One subplot per source: ground-truth signature vs matched estimate."""
    n = b_gt.shape[1]
    cols = min(n, 3)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.4 * rows),
                             squeeze=False, sharex=True)
    bands = np.arange(1, b_gt.shape[0] + 1)
    for j in range(rows * cols):
        ax = axes[j // cols][j % cols]
        if j >= n:
            ax.axis("off")
            continue
        ax.plot(bands, b_gt[:, j], "k-", lw=1.5, label="GT")
        ax.plot(bands, b_est[:, j], "r--", lw=1.5, label=method)
        ax.set_title(f"source {j + 1}", fontsize=9)
        ax.tick_params(labelsize=8)
        if j == 0:
            ax.legend(fontsize=8)
    fig.supxlabel("band", fontsize=9)
    fig.supylabel("radiance", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def save_abundance_figure(s, height, width, method, path, dpi=150):
    """Grid of per-source abundance maps in grayscale."""
    n = s.shape[0]
    cols = min(n, 3)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.6 * rows),
                             squeeze=False)
    for j in range(rows * cols):
        ax = axes[j // cols][j % cols]
        ax.axis("off")
        if j >= n:
            continue
        ax.imshow(s[j].reshape(height, width), cmap="gray",
                  vmin=0.0, vmax=max(1.0, s[j].max()))
        ax.set_title(f"source {j + 1}", fontsize=9)
    fig.suptitle(method, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def save_diagnostics_figure(diagnostics, path, dpi=150):
    """Loss terms and subproblem residuals across outer iterations."""
    if not diagnostics:
        return
    its = [row["iter"] for row in diagnostics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.5, 3.2))
    for key in ("loss", "cycle", "anchor"):
        ax1.semilogy(its, [max(row[key], 1e-300) for row in diagnostics],
                     marker="o", ms=3, label=key)
    ax1.set_xlabel("outer iteration")
    ax1.set_title("training loss terms", fontsize=10)
    ax1.legend(fontsize=8)
    for key in ("fit_factor", "fit_downsample", "fit_anchor"):
        ax2.semilogy(its, [max(row[key], 1e-300) for row in diagnostics],
                     marker="o", ms=3, label=key)
    ax2.set_xlabel("outer iteration")
    ax2.set_title("subproblem residuals", fontsize=10)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
