"""Figures written next to the delimited run outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_run(results: Sequence, summary, out_dir: str | Path) -> list[Path]:
    """Training curves and per-stage energy ratios; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [_training(results, out / "training.png"), _stages(results, summary, out / "stages.png")]
    return paths


def _training(results: Sequence, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    seen = set()
    for res in results:
        if res.record.seed in seen or not res.training:
            continue
        seen.add(res.record.seed)
        e = np.asarray(res.training)
        ax.semilogy(np.arange(len(e)), np.maximum(1 - e / res.e0, 1e-12), lw=0.8, alpha=0.7)
    ax.set_xlabel("epoch")
    ax.set_ylabel("relative energy difference")
    ax.set_title("warm-start training")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _stages(results: Sequence, summary, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for res in results:
        st = np.arange(len(res.record.rel_diffs))
        ax.semilogy(st, np.maximum(res.record.rel_diffs, 1e-12), color="0.7", lw=0.8, marker=".")
    for ep in sorted({r["epoch"] for r in summary.rows}):
        rows = [r for r in summary.rows if r["epoch"] == ep]
        ax.errorbar([r["stage"] for r in rows], [r["rel_diff_median"] for r in rows],
                    yerr=[r["rel_diff_mad"] for r in rows], marker="o", capsize=3, label=f"epoch {ep}")
    ax.set_xlabel("refinement steps")
    ax.set_ylabel("relative energy difference")
    ax.set_xticks(sorted({r["stage"] for r in summary.rows}))
    ax.legend(fontsize=8)
    ax.set_title(summary.label)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
