"""Matplotlib renderings of the report tables, written next to the CSV output."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .network import EnergyHistogram

__all__ = ["render_layer_snr_figure", "render_energy_histogram_figure"]


def _finite(values):
    return [v if v is not None and math.isfinite(v) else math.nan for v in values]


def render_layer_snr_figure(rows: list[dict], path: str | Path) -> None:
    """Per-conv-layer output SNR: measured vs single and multi mode models.

    ``rows`` are the report rows of the run/predict commands; only conv output
    stages are drawn.
    """
    conv = [r for r in rows if r.get("stage") == "output"]
    if not conv:
        return
    labels = [r["layer"] for r in conv]
    x = range(1, len(conv) + 1)

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ex = _finite([r.get("ex_snr_db") for r in conv])
    if not all(math.isnan(v) for v in ex):
        ax.plot(x, ex, "o-", label="measured")
    ax.plot(x, _finite([r.get("single_snr_db") for r in conv]), "s--", label="single-layer model")
    ax.plot(x, _finite([r.get("multi_snr_db") for r in conv]), "^--", label="multi-layer model")
    ax.set_xticks(list(x), labels, rotation=45, ha="right")
    ax.set_xlabel("layer")
    ax.set_ylabel("output SNR (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_energy_histogram_figure(
    hist: EnergyHistogram, path: str | Path, label: str | None = None
) -> None:
    """Energy share vs normalized magnitude as a filled step plot."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.fill_between(hist.bin_edges, list(hist.shares) + [hist.shares[-1]],
                    step="post", alpha=0.4)
    ax.step(hist.bin_edges, list(hist.shares) + [hist.shares[-1]], where="post")
    ax.set_xlabel("normalized magnitude")
    ax.set_ylabel("energy share")
    if label:
        ax.set_title(label)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
