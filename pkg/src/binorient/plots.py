"""Matplotlib rendering of the report artifacts (written next to the CSVs)."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import EvalReport, error_cdf  # noqa: E402


def save_cdf_figure(path, reports: dict, max_deg: float = 60.0) -> None:
    """CDF of error for theta_dir and theta_ori; one curve per labelled report."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4), sharey=True)
    for label, report in reports.items():
        for ax, errors in zip(axes, (report.errors_dir, report.errors_ori)):
            e, p = error_cdf(errors)
            ax.step(e, p, where="post", label=label)
    for ax, title in zip(axes, ("direction", "orientation")):
        ax.set_xlim(0, max_deg)
        ax.set_ylim(0, 1.0)
        ax.set_xlabel("error (deg)")
        ax.set_title(title)
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("fraction of samples")
    axes[0].legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_polar_figure(path, report: EvalReport) -> None:
    """Per-sector mean error on polar axes for both angles."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 4),
                             subplot_kw={"projection": "polar"})
    for ax, means, title in zip(axes,
                                (report.sector_mean_dir, report.sector_mean_ori),
                                ("direction", "orientation")):
        theta = np.radians(np.append(report.sector_centers,
                                     report.sector_centers[0]))
        vals = np.append(means, means[0])
        ax.plot(theta, vals)
        ax.set_theta_zero_location("N")
        ax.set_title(f"mean error by {title} sector (deg)", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_correlation_figure(path, corr_hrtf, corr_vdp, corr_combined) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    for ax, mat, title in zip(axes, (corr_hrtf, corr_vdp, corr_combined),
                              ("HRTF", "voice pattern", "combined")):
        im = ax.imshow(mat, vmin=-1, vmax=1, cmap="viridis")
        ax.set_title(title, fontsize=9)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_loss_figure(path, histories: dict) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, hist in histories.items():
        ax.plot(np.arange(1, len(hist) + 1), hist, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
