"""Matplotlib renderings of the evaluation artifacts, written next to the CSVs."""

from __future__ import annotations

from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_loss(path, losses: Sequence[float], window: int = 200) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(losses, lw=0.4, alpha=0.4, label="per iteration")
    if len(losses) >= window:
        kernel = np.ones(window) / window
        avg = np.convolve(np.asarray(losses, dtype=np.float64), kernel, mode="valid")
        ax.plot(np.arange(window - 1, len(losses)), avg, lw=1.5, label=f"mean over {window}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_recall_curve(path, points) -> None:
    pts = sorted(points, key=lambda p: p.avg_proposals_per_image)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(
        [p.avg_proposals_per_image for p in pts],
        [p.recall for p in pts],
        marker="o",
    )
    for p in pts:
        ax.annotate(
            f"{p.threshold:.2g}",
            (p.avg_proposals_per_image, p.recall),
            textcoords="offset points",
            xytext=(5, -9),
            fontsize=7,
        )
    ax.set_xlabel("average proposals per image")
    ax.set_ylabel("scale recall")
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_missrate(path, bins) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    lefts = [b.left_log2 for b in bins]
    widths = [b.right_log2 - b.left_log2 for b in bins]
    ax.bar(
        lefts,
        [b.miss_rate for b in bins],
        width=widths,
        align="edge",
        edgecolor="black",
        linewidth=0.5,
    )
    for b in bins:
        ax.annotate(
            f"n={b.population}",
            ((b.left_log2 + b.right_log2) / 2, b.miss_rate),
            ha="center",
            va="bottom",
            fontsize=7,
        )
    ax.set_xlabel("face size (log2 px)")
    ax.set_ylabel("miss rate")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_cost_comparison(path, totals: Dict[str, float]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    names = list(totals)
    mflops = [totals[n] / 1e6 for n in names]
    bars = ax.bar(names, mflops, color=["#4878d0", "#ee854a", "#6acc64"][: len(names)])
    for bar, v in zip(bars, mflops):
        ax.annotate(
            f"{v:,.0f}",
            (bar.get_x() + bar.get_width() / 2, v),
            ha="center",
            va="bottom",
            fontsize=8,
        )
    ax.set_ylabel("MFLOPs per image")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
