"""Figure rendering for simulation and dataset reports (PNG files)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_average_trajectory(summary, path, ylabel="popularity") -> Path:
    """Per-step mean popularity with a one-std band; one curve per split group if present."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        groups = summary.split.items() if summary.split else [("all", summary)]
        for label, s in groups:
            m, sd = np.asarray(s.series_mean), np.asarray(s.series_std)
            x = np.arange(1, len(m) + 1)
            ax.plot(x, m, lw=1.4, label=label)
            ax.fill_between(x, m - sd, m + sd, alpha=0.15)
        ax.set_xlabel("simulation step")
        ax.set_ylabel(ylabel)
        if summary.split:
            ax.legend()
        return _save(fig, path)


def plot_popularity_diff(reports, path) -> Path:
    """Distribution of first / mean / last step popularity minus seed popularity."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        seed = np.array([r.seed_pop for r in reports])
        for name in ("first_step_pop", "mean_pop", "last_step_pop"):
            vals = np.array([getattr(r, name) for r in reports]) - seed
            ax.hist(vals, bins=40, histtype="step", lw=1.3, label=name.replace("_pop", ""))
        ax.axvline(0, color="k", lw=0.6)
        ax.set_xlabel("popularity minus seed popularity")
        ax.set_ylabel("trajectories")
        ax.legend()
        return _save(fig, path)


def plot_slopes(reports, path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        slopes = [r.slope for r in reports if r.slope is not None]
        ax.hist(slopes, bins=40, color="0.4")
        ax.axvline(0, color="C3", lw=0.8)
        ax.set_xlabel("trajectory slope")
        ax.set_ylabel("trajectories")
        return _save(fig, path)


def plot_sweep(rows: list[dict], path, key: str = "cohort") -> Path:
    """First-step, mean and last-step popularity plus mean slope across cohorts."""
    with plt.rc_context(RC):
        fig, (a, b) = plt.subplots(1, 2, figsize=(7.0, 3.0))
        labels = [str(r[key]) for r in rows]
        x = np.arange(len(rows))
        for name in ("first_step_pop", "mean_pop", "last_step_pop"):
            a.plot(x, [r[name] for r in rows], marker="o", ms=3, label=name.replace("_pop", ""))
        a.set_ylabel("popularity")
        a.legend()
        b.plot(x, [r["slope"] for r in rows], marker="o", ms=3, color="C3")
        b.axhline(0, color="k", lw=0.6)
        b.set_ylabel("mean slope")
        for ax in (a, b):
            ax.set_xticks(x, labels, rotation=45, ha="right")
        return _save(fig, path)


def plot_dataset_stats(st, path) -> Path:
    """Four panels: item popularity, history length, history popularity, rating/popularity correlation."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 4, figsize=(11.0, 2.6))
        a, b, c, e = axes
        a.hist(st.item_popularity, bins=50, color="0.35")
        a.set_yscale("log")
        a.set_xlabel("ratings per item")
        b.hist(st.history_length, bins=50, color="0.35")
        b.set_yscale("log")
        b.set_xlabel("ratings per user")
        c.hist(st.history_popularity, bins=50, color="0.35")
        c.axvline(st.mean_item_popularity, color="C3", lw=0.8)
        c.set_xlabel("mean popularity of rated items")
        e.hist(st.rating_popularity_corr, bins=40, color="0.35")
        e.set_xlabel("Spearman(rating, popularity)")
        return _save(fig, path)
