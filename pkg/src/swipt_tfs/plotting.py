"""Matplotlib figures for sweep, convergence and fairness outputs (PNG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LABELS = {"tfs": "TFS", "ts": "TS", "ss-greedy": "SS (greedy reimplementation)"}
AXIS = {"E": "minimum harvested power per user (uW)", "K": "number of users", "X": "regularizer weight X"}
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def plot_sweep(summary: list, path) -> Path:
    """Seed-averaged sum rate (common-support seeds) against the swept value."""
    fig, ax = plt.subplots(figsize=(6, 4))
    variable = summary[0]["variable"] if summary else "E"
    scale = 1e6 if variable == "E" else 1.0
    for strategy in LABELS:
        rows = [r for r in summary if r["strategy"] == strategy]
        if not rows:
            continue
        x = np.array([r["value"] for r in rows]) * scale
        y = np.array([r["common_mean_sum_rate_bps"] for r in rows]) / 1e6
        ax.plot(x, y, marker="o", label=LABELS[strategy])
    if variable == "X":
        ax.set_xscale("log")
    ax.set_xlabel(AXIS.get(variable, variable))
    ax.set_ylabel("sum rate (Mbit/s)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_convergence(results: dict, path) -> Path:
    """Modified objective per iteration, one line per regularizer weight."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for X, res in sorted(results.items()):
        y = np.array([r.modified_objective for r in res.trace]) / 1e6
        ax.plot(np.arange(1, y.size + 1), y, label=f"X = {X:g}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("modified objective (Mbit/s)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_fairness(results: dict, path) -> Path:
    """Grouped bars of per-user rates for each strategy."""
    fig, ax = plt.subplots(figsize=(6, 4))
    shown = [(s, r) for s, r in results.items() if r is not None and r.status != "infeasible"]
    width = 0.8 / max(1, len(shown))
    for i, (s, res) in enumerate(shown):
        users = np.arange(res.rates.size)
        ax.bar(users + i * width, res.rates / 1e6, width, label=LABELS.get(s, s))
    ax.set_xlabel("user")
    ax.set_ylabel("rate (Mbit/s)")
    ax.grid(True, axis="y", alpha=0.3)
    if shown:
        ax.legend()
    fig.tight_layout()
    return _save(fig, path)
