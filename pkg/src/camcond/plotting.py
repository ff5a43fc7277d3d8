"""Report figures written next to the JSON/CSV outputs of ``eval`` and ``calibrate``."""

from __future__ import annotations

import io
import math
from contextlib import contextmanager

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import atomic_write_bytes  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
    "lines.markersize": 5,
    "figure.dpi": 100,
    "savefig.dpi": 120,
}
COLORS = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49"]


@contextmanager
def report_style():
    with plt.rc_context(STYLE):
        yield


def save_figure(fig, path) -> None:
    # fixed metadata keeps reruns byte-identical
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_speed_metrics(report, path) -> None:
    """PSNR/FPSNR, SSIM and new-content ratio against sampling speed."""
    entries = report.entries
    speeds = [e.speed for e in entries]
    labels = [f"x{s:g}" for s in speeds]
    x = np.arange(len(speeds))
    with report_style():
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 2.8))
        ax = axes[0]
        for k, (attr, name) in enumerate((("masked_psnr", "masked PSNR"), ("fpsnr", "FPSNR"))):
            vals = [getattr(e, attr) for e in entries]
            finite = [v if math.isfinite(v) else np.nan for v in vals]
            ax.plot(x, finite, "o-", color=COLORS[k], label=name)
        ax.set_ylabel("dB")
        ax.set_title("PSNR")
        ax.legend(frameon=False)
        axes[1].plot(x, [e.masked_ssim for e in entries], "o-", color=COLORS[2])
        axes[1].set_title("masked SSIM")
        axes[2].bar(x, [100 * e.new_content_ratio for e in entries], color=COLORS[3], width=0.6)
        axes[2].set_ylabel("%")
        axes[2].set_title("new content")
        for ax in axes:
            ax.set_xticks(x, labels)
            ax.set_xlabel("sampling speed")
        fig.tight_layout()
    save_figure(fig, path)


def plot_depth_ratios(ratios, report, path) -> None:
    """Histogram of SfM/metric depth ratios with the trimmed range and mean."""
    r = np.sort(np.asarray(ratios, dtype=np.float64))
    cut = report.trimmed_per_side
    kept = r[cut : len(r) - cut]
    with report_style():
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        lo, hi = r[0], r[-1]
        if hi > lo:
            bins = np.linspace(lo, hi, 60)
        else:
            bins = np.array([lo - 0.5, lo + 0.5]) if lo == 0 else np.array([lo * 0.99, lo * 1.01])
        ax.hist(r, bins=bins, color="#bbbbbb", label="all ratios")
        ax.hist(kept, bins=bins, color=COLORS[0], label="kept after trimming")
        ax.axvline(report.mean_ratio, color=COLORS[1], label=f"mean {report.mean_ratio:.4g}")
        ax.set_xlabel("SfM depth / metric depth")
        ax.set_ylabel("count")
        ax.legend(frameon=False)
        fig.tight_layout()
    save_figure(fig, path)
