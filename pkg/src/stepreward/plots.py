"""SVG chart output for the analyze artifacts.

matplotlib is imported lazily so the core engine stays import-light. SVG
output is made byte-deterministic: the embedded date is suppressed and the
element-id hash salt is pinned.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

_SVG_METADATA = {"Date": None}


def _mpl():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "stepreward"
    import matplotlib.pyplot as plt

    return plt


def save_pass_at_k_plot(ks: Sequence[int], mean_estimates: Sequence[float], path: str | Path) -> None:
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(list(ks), list(mean_estimates), marker="o")
    ax.set_xlabel("k")
    ax.set_ylabel("pass@k")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("Mean pass@k")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)


def save_length_plot(lengths: Sequence[int], path: str | Path, bins: int = 20) -> None:
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(list(lengths), bins=bins, color="#4878a8", edgecolor="white")
    ax.set_xlabel("response length (tokens)")
    ax.set_ylabel("trajectories")
    ax.set_title("Response lengths")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)


def save_training_curve(
    episodes: Sequence[int],
    ineffective_fraction: Sequence[float],
    accuracy: Sequence[float],
    path: str | Path,
) -> None:
    plt = _mpl()
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.plot(list(episodes), list(ineffective_fraction), label="ineffective fraction")
    ax.plot(list(episodes), list(accuracy), label="accuracy")
    ax.set_xlabel("episode")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="best")
    ax.set_title("Training progress")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
