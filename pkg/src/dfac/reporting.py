"""Matplotlib figure rendering for the CLI report path.

Figures are written next to the delimited outputs: learning curves beside the
training CSV, factorization curves beside the export JSON, and a per-method
summary beside the summary CSV.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_learning_curves(log_rows, path, title: str = "") -> None:
    episodes = [r.episode for r in log_rows]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    panels = [
        ("loss", [r.loss for r in log_rows], "log"),
        ("return", [r.ret for r in log_rows], "linear"),
        ("qdist", [r.qdist for r in log_rows], "linear"),
        ("wdist", [r.wdist for r in log_rows], "linear"),
    ]
    for ax, (label, values, scale) in zip(axes.ravel(), panels):
        ax.plot(episodes, values, lw=1.2)
        ax.set_ylabel(label)
        if scale == "log" and all(v > 0 for v in values):
            ax.set_yscale("log")
        ax.grid(alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("episode")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_factorization(export: dict, path) -> None:
    levels = export["levels"]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(levels, export["z_gt"], "k--", lw=1.5, label="ground truth")
    ax.plot(levels, export["z_jt"], lw=1.8, label="joint")
    for k, curve in enumerate(export["z_agents"]):
        ax.plot(levels, curve, lw=1.0, alpha=0.8, label=f"agent {k + 1}")
    ax.set_xlabel("quantile level")
    ax.set_ylabel("value")
    action = ",".join(export["joint_action"])
    ax.set_title(f"{export['method']} factorization at ({action})")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_summary(rows: list[dict], path) -> None:
    """Bar panels of the median metrics per method."""
    methods = [r["method"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
    for ax, key in zip(axes, ("qdist", "wdist", "return")):
        ax.bar(methods, [r[key] for r in rows], color="#4878cf")
        ax.set_title(key)
        ax.tick_params(axis="x", rotation=60, labelsize=8)
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
