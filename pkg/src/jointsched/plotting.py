"""PNG figures for experiment sweeps (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import aggregate  # noqa: E402

AXIS_LABEL = {
    "convex-vs-rp": "URLLC load rho",
    "threshold": "URLLC load rho",
    "delta-tradeoff": "delta",
    "linear-sanity": "URLLC load",
}


def _series(rows, column):
    stats = aggregate(rows, column)
    by_sched: dict = {}
    for (sched, x), (mean, se) in sorted(stats.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        by_sched.setdefault(sched, []).append((x, mean, se))
    return by_sched


def _panel(ax, rows, column, ylabel, log=False):
    for sched, pts in _series(rows, column).items():
        xs, ys, es = zip(*pts)
        ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=sched)
    ax.set_ylabel(ylabel)
    if log:
        ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend()


def plot_experiment(name: str, rows: list, out_dir: str | Path) -> list[Path]:
    """Write the figures for one preset; returns the created paths."""
    out = Path(out_dir)
    xlabel = AXIS_LABEL.get(name, "parameter")
    panels = [("sum_utility", "sum utility", False)]
    if name in ("convex-vs-rp", "linear-sanity"):
        panels += [("mean_rate_robust", "robust mean rate", False), ("mean_rate_sensitive", "sensitive mean rate", False)]
    if name == "threshold":
        panels.append(("any_loss_prob", "P(any eMBB user loses the slot)", False))
    if name == "delta-tradeoff":
        tails = [r for r in rows if r["urllc_delay_tail"] > 0]
        panels.append(("urllc_delay_tail", "P(URLLC delay > 2 minislots)", bool(tails)))
    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 3 * len(panels)), squeeze=False)
    for ax, (col, label, log) in zip(axes[:, 0], panels):
        _panel(ax, rows, col, label, log)
    axes[-1, 0].set_xlabel(xlabel)
    fig.suptitle(name)
    fig.tight_layout()
    path = out / f"{name}.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return [path]
