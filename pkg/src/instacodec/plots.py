"""Static SVG charts: RD curves and stacked rate-composition bars."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import RATE_PARTS, RateReport, RDCurve  # noqa: E402

# fixed so repeated runs write identical files
_SVG_META = {"Date": None, "Creator": None}
_SVG_RC = {"svg.hashsalt": "instacodec"}


def _save(fig, path) -> None:
    with plt.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_rd_curves(curves: list[RDCurve], path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for curve in curves:
        ax.plot(curve.bpps, curve.psnrs, marker="o", label=curve.label)
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel("PSNR-RGB (dB)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_rate_bars(reports: dict[str, RateReport], path: str | Path, title: str = "") -> None:
    """One stacked bar per stream, split into the fractions of each rate part."""
    labels = list(reports)
    fig, ax = plt.subplots(figsize=(1.2 * len(labels) + 3, 4))
    bottom = [0.0] * len(labels)
    for part in RATE_PARTS:
        heights = [reports[k].fractions[part] for k in labels]
        ax.bar(labels, heights, bottom=bottom, label=part.replace("_", " "))
        bottom = [b + h for b, h in zip(bottom, heights)]
    ax.set_ylabel("fraction of coded bits")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small", loc="upper left", bbox_to_anchor=(1.0, 1.0))
    fig.tight_layout()
    _save(fig, path)
