"""Figure rendering for the report paths (saved next to the CSV outputs)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_compare_bars(rows: list[dict], out_png: str | Path) -> None:
    """Per-policy mean-ratio bars with the shortest-path ratio as a dotted line."""
    labels = [f"{r['policy']}/{r['scenario']}" for r in rows]
    ratios = [float(r["mean_ratio"]) for r in rows]
    sp = [float(r["shortest_path_ratio"]) for r in rows]

    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(rows)), 3.5))
    ax.bar(range(len(rows)), ratios, color="#4878cf", width=0.6)
    if sp:
        ax.axhline(sum(sp) / len(sp), linestyle=":", color="black",
                   label="shortest path")
        ax.legend(frameon=False)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean max-utilisation ratio vs optimal")
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)


def render_learning_curve(rows: list[dict], out_png: str | Path) -> None:
    """Mean episode reward per update over training steps."""
    steps = [r["step"] for r in rows]
    rewards = [r["mean_reward"] for r in rows]

    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(steps, rewards, color="#4878cf")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("mean reward")
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
