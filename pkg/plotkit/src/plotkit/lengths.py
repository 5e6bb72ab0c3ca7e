"""Trajectory-length histograms across training checkpoints."""
from __future__ import annotations

import warnings

import numpy as np

from .style import PNG_METADATA, apply_style


def read_snapshot_lengths(path: str) -> list[int]:
    """Lengths from a snapshot file: 'a0 a1 ... an<TAB>reward' per line."""
    lengths = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            actions = line.split("\t", 1)[0]
            lengths.append(len(actions.split()))
    return lengths


def plot_length_hist(
    snapshots: dict[int, str],
    checkpoints: tuple[int, ...],
    output_path: str = "lengths.png",
    max_length: int | None = None,
) -> str:
    """One shared-axis histogram panel per checkpoint; missing ones are skipped."""
    import matplotlib.pyplot as plt

    apply_style()
    present = []
    for step in checkpoints:
        if step in snapshots:
            present.append((step, read_snapshot_lengths(snapshots[step])))
        else:
            warnings.warn(f"no snapshot for checkpoint {step}; skipped")
    if not present:
        raise ValueError("no checkpoints to plot")

    bound = max_length or max(max(lengths) for _, lengths in present)
    bins = np.arange(0.5, bound + 1.5)  # unit bins covering [1, bound]
    n = len(present)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 2.8), sharey=True, squeeze=False)
    for ax, (step, lengths) in zip(axes[0], present):
        ax.hist(lengths, bins=bins, color="#1f77b4", edgecolor="white")
        ax.set_title(f"step {step}")
        ax.set_xlabel("trajectory length")
        ax.set_xlim(0.5, bound + 0.5)
    axes[0][0].set_ylabel("count")
    fig.tight_layout()
    fig.savefig(output_path, metadata=PNG_METADATA)
    plt.close(fig)
    return output_path
