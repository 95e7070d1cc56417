"""Makespan-versus-depth figures rendered next to the CSV output."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchResult  # noqa: E402


def _style(ax) -> None:
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.grid(True, axis="y", linestyle=":", linewidth=0.6, alpha=0.7)
    ax.set_axisbelow(True)


def plot_makespan(results: Sequence[BenchResult], path: Path, normalize: bool = True) -> Path:
    """One line per result: mean makespan by depth, optionally relative to depth 0."""
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for res in results:
        means = res.mean_makespan()
        depths = list(means)
        values = [means[d] for d in depths]
        if normalize and 0 in means and means[0] > 0:
            values = [v / means[0] for v in values]
        label = f"{res.spec.workload} ({res.spec.executor})"
        ax.plot(range(len(depths)), values, marker="o", linewidth=1.4, markersize=4, label=label)
        ax.set_xticks(range(len(depths)), [str(d) for d in depths])
    ax.set_xlabel("pre-issuing depth")
    ax.set_ylabel("makespan / depth 0" if normalize else "makespan (µs)")
    if normalize:
        ax.set_ylim(bottom=0)
    _style(ax)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
