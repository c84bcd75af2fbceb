"""Report figures written straight to image files (headless backend)."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from gmoe.graphs import Graph  # noqa: E402


def _pooled_counts(graphs: Sequence[Graph]) -> np.ndarray:
    degs = [g.degrees() for g in graphs]
    return np.bincount(np.concatenate(degs)) if degs else np.zeros(1, dtype=int)


def degree_histogram_figure(path, reference: Sequence[Graph], generated: Sequence[Graph], title: str = "") -> None:
    degree_counts_figure(path, _pooled_counts(reference), _pooled_counts(generated), title)


def degree_counts_figure(path, reference: np.ndarray, generated: np.ndarray, title: str = "") -> None:
    """Side-by-side bars of two pooled degree count vectors, each normalised."""
    top = max(len(reference), len(generated))
    x = np.arange(top)

    def norm(c):
        h = np.pad(np.asarray(c, dtype=float), (0, top - len(c)))
        return h / max(h.sum(), 1.0)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    # wide ranges read better as outlines than as thousands of thin bars
    if top > 60:
        ax.step(x, norm(reference), where="mid", label="reference")
        ax.step(x, norm(generated), where="mid", label="generated")
    else:
        ax.bar(x - 0.2, norm(reference), width=0.4, label="reference")
        ax.bar(x + 0.2, norm(generated), width=0.4, label="generated")
    ax.set_xlabel("degree")
    ax.set_ylabel("fraction of vertices")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def trace_figure(path, iterations, values, phases=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    vals = np.maximum(np.asarray(values, dtype=float), 1e-300)
    ax.semilogy(iterations, vals, lw=1)
    if phases is not None:
        phases = np.asarray(phases)
        for i in np.flatnonzero(np.diff(phases)) + 1:
            ax.axvline(iterations[i], color="grey", ls=":", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("estimated objective")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def graphlet_bars_figure(path, labels: Sequence[str], target, generated) -> None:
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(labels)), 3.5))
    ax.bar(x - 0.2, target, width=0.4, label="target")
    ax.bar(x + 0.2, generated, width=0.4, label="generated")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("normalised count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
