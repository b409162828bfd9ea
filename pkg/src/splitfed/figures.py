"""Figure rendering for the report path; one PNG next to each CSV."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def loss_figure(losses, walls, path, drift=None) -> Path:
    """Loss (and optional drift) against simulated wall-clock time."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(walls, losses, lw=1.2, color="tab:blue", label="training loss")
    ax.set_xlabel("model time (s)")
    ax.set_ylabel("loss")
    if drift is not None:
        ax2 = ax.twinx()
        ax2.plot(walls, drift, lw=0.8, color="tab:orange", alpha=0.7,
                 label="max client drift")
        ax2.set_ylabel("max client drift")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def trace_figure(rows, path) -> Path:
    """Planner objective per iteration, one line per re-planning event."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    by_reopt: dict[int, list] = {}
    for row in rows:
        by_reopt.setdefault(int(row["reopt"]), []).append(row)
    for reopt, group in sorted(by_reopt.items()):
        iters = [int(r["iter"]) for r in group]
        theta = [float(r["theta_s"]) for r in group]
        ax.plot(iters, theta, marker="o", ms=3, lw=1.0, alpha=0.8,
                label=f"re-plan {reopt}" if len(by_reopt) <= 8 else None)
    ax.set_xlabel("iteration")
    ax.set_ylabel("predicted time-to-accuracy (s)")
    if 0 < len(by_reopt) <= 8:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def summary_figure(summary_rows, path) -> Path:
    """Mean time-to-target per strategy with a standard-deviation whisker."""
    rows = [r for r in summary_rows if r.get("mean_time_to_target_s") != ""]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    names = [r["strategy"] for r in rows]
    means = [float(r["mean_time_to_target_s"]) for r in rows]
    stds = [float(r["std_time_to_target_s"]) for r in rows]
    ax.bar(names, means, yerr=stds, capsize=4, color="tab:blue", alpha=0.85)
    ax.set_ylabel("mean time to target (s)")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
