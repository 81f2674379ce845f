"""Matplotlib figures written next to the JSON/CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.linestyle": ":",
    "axes.axisbelow": True,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_roc(curves: dict, path, target_fmr: float | None = None):
    """FNMR against FMR (log x) for each named curve."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, roc in curves.items():
            arr = np.asarray(roc, dtype=float)
            fmr = np.clip(arr[:, 0], 1e-7, 1.0)
            ax.step(fmr, arr[:, 1], where="post", label=name)
        if target_fmr:
            ax.axvline(target_fmr, color="0.4", lw=0.8, ls="--")
        ax.set_xscale("log")
        ax.set_xlim(1e-6, 1.0)
        ax.set_xlabel("FMR")
        ax.set_ylabel("FNMR")
        ax.legend()
        return _save(fig, path)


def plot_score_hist(scores, path, threshold: float | None = None, bins: int = 60):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        edges = np.linspace(0.0, 1.0, bins + 1)
        ax.hist(scores.imposter, bins=edges, alpha=0.6, density=True, label="imposter")
        ax.hist(scores.genuine, bins=edges, alpha=0.6, density=True, label="genuine")
        if threshold is not None:
            ax.axvline(threshold, color="k", lw=0.8, ls="--", label="threshold")
        ax.set_yscale("log")
        ax.set_xlabel("score")
        ax.set_ylabel("density")
        ax.legend()
        return _save(fig, path)


def plot_sweep(sweep: dict, path):
    """FDR and iGARBE against the balancing factor."""
    bs = sorted(sweep, key=float)
    x = [float(b) for b in bs]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for key, label in (("fdr", "FDR"), ("igarbe", "iGARBE")):
            ax.plot(x, [sweep[b][key] for b in bs], marker="o", label=label)
        ax.set_xlabel("balancing factor (male fraction)")
        ax.set_ylabel("fairness")
        ax.set_ylim(min(0.8, ax.get_ylim()[0]), 1.005)
        ax.legend()
        return _save(fig, path)
