"""Figure rendering for reports. Uses the non-interactive Agg backend."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lang.ast import SIGNALS  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "latentgp",
}
# Fixed metadata keeps the PNG bytes stable across reruns.
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_locality(rows: Sequence[Mapping], path: str | Path) -> Path:
    """Decode success and mean action divergence against perturbation scale."""
    eps = [r["epsilon"] for r in rows]
    succ = [r["decode_success_rate"] for r in rows]
    div = [np.nan if r["mean_divergence"] is None else r["mean_divergence"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(eps, succ, "o-", label="decode success")
        ax.plot(eps, div, "s--", label="action divergence")
        ax.set_xscale("log")
        ax.set_xlabel("perturbation scale ε")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="center left")
        return _save(fig, path)


def plot_disentanglement(matrix, path: str | Path, title: str = "") -> Path:
    """4x4 heatmap of mean per-signal edit distance (rows: perturbed block)."""
    m = np.asarray(matrix, dtype=float)
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(4.6, 4.0))
        im = ax.imshow(m, cmap="viridis", vmin=0.0)
        ax.set_xticks(range(4), [s.upper() for s in SIGNALS])
        ax.set_yticks(range(4), [s.upper() for s in SIGNALS])
        ax.set_xlabel("decoded signal")
        ax.set_ylabel("perturbed block")
        for i in range(4):
            for j in range(4):
                ax.text(j, i, f"{m[i, j]:.3f}", ha="center", va="center", color="w", fontsize=8)
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax)
        return _save(fig, path)


def plot_best_so_far(curves: Mapping[str, Sequence[Sequence[float]]], path: str | Path) -> Path:
    """Median (line) and min-max band of best-so-far fitness per operator."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, runs in sorted(curves.items()):
            arr = np.array([[np.nan if x is None or not np.isfinite(x) else x for x in r] for r in runs])
            g = np.arange(arr.shape[1])
            ax.plot(g, np.nanmedian(arr, axis=0), label=name)
            ax.fill_between(g, np.nanmin(arr, axis=0), np.nanmax(arr, axis=0), alpha=0.2)
        ax.set_xlabel("generation")
        ax.set_ylabel("best fitness (Sharpe)")
        ax.legend()
        return _save(fig, path)


def plot_training(history: Sequence[Mapping], path: str | Path) -> Path:
    """VAE loss and token accuracy per epoch."""
    ep = [h["epoch"] for h in history]
    with plt.rc_context(STYLE):
        fig, (a, b) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        a.plot(ep, [h["train_recon"] for h in history], label="train recon")
        a.plot(ep, [h["val_recon"] for h in history], label="val recon")
        a.set_xlabel("epoch")
        a.legend()
        b.plot(ep, [h["train_acc"] for h in history], label="train acc")
        b.plot(ep, [h["val_acc"] for h in history], label="val acc")
        b.set_xlabel("epoch")
        b.legend()
        return _save(fig, path)


def plot_operator_summary(table: Sequence[Mapping], path: str | Path) -> Path:
    """Median Sharpe and median budget fraction per operator."""
    names = [r["operator"] for r in table]
    with plt.rc_context(STYLE):
        fig, (a, b) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        a.bar(names, [r["median_sharpe"] or 0.0 for r in table])
        a.set_ylabel("median Sharpe")
        b.bar(names, [r["median_budget_fraction"] or 0.0 for r in table])
        b.set_ylabel("median budget fraction to best")
        b.set_ylim(0, 1)
        return _save(fig, path)
