"""Random graph realisation: kernel model, community model and reference SBMs."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from gmoe.errors import DataError
from gmoe.generator import GeneratorParams, LatentOutput, forward, sample_noise
from gmoe.graphs import Graph
from gmoe.kernels import KernelSpec

# rows of the upper triangle generated per chunk for large graphs
_CHUNK = 512


@dataclass(frozen=True)
class SbmSpec:
    pi: tuple[float, ...]
    B: tuple[tuple[float, ...], ...]
    n_nodes: int

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if np.any(pi < 0) or not np.isclose(pi.sum(), 1.0):
            raise DataError("block probabilities must form a simplex")
        if B.shape != (len(pi), len(pi)) or not np.allclose(B, B.T):
            raise DataError("block matrix must be symmetric and match pi")
        if np.any(B < 0) or np.any(B > 1):
            raise DataError("block matrix entries must lie in [0, 1]")
        if self.n_nodes < 1:
            raise DataError("n_nodes must be positive")

    @classmethod
    def two_block(cls, n_nodes: int = 80) -> "SbmSpec":
        return cls((0.5, 0.5), ((0.3, 0.05), (0.05, 0.3)), n_nodes)

    @classmethod
    def four_block(cls, n_nodes: int = 16) -> "SbmSpec":
        B = tuple(tuple(0.75 if i == j else 0.1 for j in range(4)) for i in range(4))
        return cls((0.25,) * 4, B, n_nodes)

    def expected_edges(self) -> float:
        pi = np.asarray(self.pi)
        return self.n_nodes * (self.n_nodes - 1) / 2 * float(pi @ np.asarray(self.B) @ pi)


@dataclass(frozen=True)
class CommunityModel:
    z: np.ndarray
    s: np.ndarray
    n_nodes: int

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        if np.any(s < 0) or not np.isclose(s.sum(), 1.0):
            raise DataError("community probabilities must form a simplex")
        if np.asarray(self.z).shape[0] != len(s):
            raise DataError("one embedding per community is required")

    def edge_matrix(self, k: KernelSpec) -> np.ndarray:
        z = np.asarray(self.z, dtype=float)
        return k(z[:, None, :], z[None, :, :])


def _relabel_arrays(adj: np.ndarray, mask: np.ndarray, rng) -> Graph:
    perm = rng.permutation(len(mask))
    return Graph._wrap(adj[np.ix_(perm, perm)], mask[perm])


def _bernoulli_symmetric(probs_fn, n: int, rng) -> np.ndarray:
    """Symmetric boolean matrix with independent upper-triangle entries."""
    adj = np.zeros((n, n), dtype=bool)
    for start in range(0, n, _CHUNK):
        stop = min(n, start + _CHUNK)
        p = probs_fn(start, stop)
        draw = rng.random(p.shape, dtype=np.float32) < p
        # keep strictly upper entries only
        draw &= np.arange(n)[None, :] > np.arange(start, stop)[:, None]
        adj[start:stop] = draw
    adj |= adj.T
    return adj


def realize(latent: LatentOutput, k: KernelSpec, rng: np.random.Generator, relabel: bool = True) -> Graph:
    """Draw one graph from a single latent output (batch index 0).

    Vertices are kept with probability ``q_i``, edges appear with probability
    ``phi(z_i, z_j)`` (or ``y_ij``), then labels are shuffled uniformly.
    """
    q = latent.q[0]
    n = len(q)
    if latent.y is not None:
        probs = latent.y[0]
    else:
        z = latent.z[0]
        probs = k(z[:, None, :], z[None, :, :])
    keep = rng.random(n) < q
    adj = _bernoulli_symmetric(lambda a, b: probs[a:b], n, rng)
    adj &= keep[:, None] & keep[None, :]
    if relabel:
        return _relabel_arrays(adj, keep, rng)
    return Graph._wrap(adj, keep)


def realize_community(cm: CommunityModel, k: KernelSpec, rng: np.random.Generator, relabel: bool = True) -> Graph:
    """Community draw: nodes pick communities i.i.d. from ``s``; no vertex removal."""
    return _block_graph(cm.edge_matrix(k), cm.s, cm.n_nodes, rng, relabel)


def _block_graph(P, s, n, rng, relabel) -> Graph:
    P = np.asarray(P, dtype=np.float32)
    c = rng.choice(len(s), size=n, p=np.asarray(s) / np.sum(s))
    adj = _bernoulli_symmetric(lambda a, b: P[c[a:b][:, None], c[None, :]], n, rng)
    mask = np.ones(n, dtype=bool)
    if relabel:
        return _relabel_arrays(adj, mask, rng)
    return Graph._wrap(adj, mask)


def sample_sbm(spec: SbmSpec, rng: np.random.Generator, relabel: bool = True) -> Graph:
    return _block_graph(np.asarray(spec.B), spec.pi, spec.n_nodes, rng, relabel)


def empty_graph(n: int) -> Graph:
    return Graph.empty(n)


def generate(params: GeneratorParams, k: KernelSpec, count: int, rng: np.random.Generator, n_nodes: int | None = None) -> list[Graph]:
    """``count`` graphs, each from a fresh noise draw.

    For community models ``n_nodes`` overrides the stored node count.
    """
    arch = params.arch
    graphs = []
    for _ in range(count):
        latent = forward(params, sample_noise(rng, arch.input_dim))
        if arch.head == "community":
            cm = CommunityModel(latent.z[0], latent.s, n_nodes or arch.n_nodes)
            graphs.append(realize_community(cm, k, rng))
        else:
            graphs.append(realize(latent, k, rng))
    return graphs


def iter_generate(params, k, count, rng, n_nodes=None):
    """Lazy variant of :func:`generate` for very large graphs."""
    for _ in range(count):
        yield generate(params, k, 1, rng, n_nodes)[0]


class LazySample(Sequence):
    """Re-iterable sample whose graph ``i`` is drawn on access from its own seed.

    Large graphs are rebuilt whenever they are indexed, so no more than one
    needs to be held in memory at a time.
    """

    def __init__(self, draw: Callable[[np.random.Generator], Graph], count: int, rng: np.random.Generator,
                 num_vertices: int | None = None):
        self._draw = draw
        self._seeds = rng.bit_generator.seed_seq.spawn(count)
        # every graph has exactly this many vertices, when known in advance
        self.num_vertices = num_vertices

    def __len__(self) -> int:
        return len(self._seeds)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return self._draw(np.random.default_rng(self._seeds[i]))
