"""Graphlet statistics of single graphs and of datasets.

A statistic vector is laid out as ``[node fraction, class_0 .. class_{K-1},
partial_0 ..]``.  Class values are normalised by ``C(n, p)`` where ``n`` is
the label universe size, so a graph with fewer than ``n`` vertices has class
values summing to ``C(n_k, p) / C(n, p)``.
"""

from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import Iterable, Sequence

import numpy as np

from gmoe.errors import DataError, EmptyDataset, OrderTooLarge
from gmoe.graphs import ClassRegistry, Graph, subset_codes

EXACT_LIMIT = 200_000
DEFAULT_SAMPLES = 100_000


@dataclass(frozen=True)
class PartialGraphlet:
    """Pattern with entries 1 (edge), 0 (non-edge) and -1 (ignored)."""

    mask: tuple[tuple[int, ...], ...]
    name: str = "partial"

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError("partial graphlet mask must be square")
        if not np.array_equal(m, m.T):
            raise DataError("partial graphlet mask must be symmetric")
        if np.any(np.diagonal(m) != 0):
            raise DataError("partial graphlet mask needs a zero diagonal")
        if not np.isin(m, (-1, 0, 1)).all():
            raise DataError("partial graphlet entries must be -1, 0 or 1")

    @classmethod
    def star(cls, p: int) -> "PartialGraphlet":
        m = -np.ones((p, p), dtype=int)
        m[0, :] = 1
        m[:, 0] = 1
        np.fill_diagonal(m, 0)
        return cls(tuple(map(tuple, m.tolist())), name=f"star{p}")

    @property
    def order(self) -> int:
        return len(self.mask)

    @property
    def is_star(self) -> bool:
        return self == PartialGraphlet.star(self.order)

    def matrix(self) -> np.ndarray:
        return np.asarray(self.mask, dtype=int)


@dataclass(frozen=True)
class StatisticSet:
    """Which statistics a moment vector holds."""

    order: int
    num_classes: int
    include_node: bool = True
    partials: tuple[PartialGraphlet, ...] = ()

    def __len__(self):
        return int(self.include_node) + self.num_classes + len(self.partials)

    @property
    def class_slice(self) -> slice:
        start = int(self.include_node)
        return slice(start, start + self.num_classes)

    @property
    def partial_slice(self) -> slice:
        start = int(self.include_node) + self.num_classes
        return slice(start, start + len(self.partials))

    def labels(self) -> list[str]:
        out = ["node"] if self.include_node else []
        out += [f"g{self.order}_{k}" for k in range(self.num_classes)]
        out += [m.name for m in self.partials]
        return out


@dataclass
class MomentVector:
    stats: StatisticSet
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.stats),):
            raise DataError(f"expected {len(self.stats)} values, got {self.values.shape}")

    @property
    def node(self) -> float:
        if not self.stats.include_node:
            raise KeyError("no node statistic")
        return float(self.values[0])

    @property
    def classes(self) -> np.ndarray:
        return self.values[self.stats.class_slice]

    @property
    def partials(self) -> np.ndarray:
        return self.values[self.stats.partial_slice]

    def to_csv(self, path, reg: ClassRegistry, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["class_id", "canonical_code_hex", "value"])
            for label, code, value in self.rows(reg):
                w.writerow([label, code, repr(float(value))])

    def rows(self, reg: ClassRegistry):
        p = self.stats.order
        vals = iter(self.values)
        if self.stats.include_node:
            yield "node", "", next(vals)
        for cls_ in reg.classes(p):
            yield cls_.class_id, cls_.canonical_code.hex(), next(vals)
        for m in self.stats.partials:
            yield m.name, "", next(vals)

    @classmethod
    def from_csv(cls, path, stats: StatisticSet) -> "MomentVector":
        with open(path) as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        values = [float(r[2]) for r in rows[1:]]
        return cls(stats, np.array(values))


def statistic_set(reg: ClassRegistry, p: int, partials=(), include_node=True) -> StatisticSet:
    return StatisticSet(p, reg.num_classes(p), include_node, tuple(partials))


# ---------------------------------------------------------------------------
# subset generation


@lru_cache(maxsize=64)
def _all_subsets(k: int, p: int) -> np.ndarray:
    out = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(k), p)),
        dtype=np.intp,
        count=comb(k, p) * p,
    ).reshape(-1, p)
    out.flags.writeable = False
    return out


def sample_subsets(rng: np.random.Generator, k: int, p: int, size: int) -> np.ndarray:
    """``size`` uniform ``p``-subsets of ``range(k)`` by Floyd's algorithm, one per row."""
    if p > k:
        raise OrderTooLarge(f"cannot draw {p}-subsets from {k} items")
    out = np.empty((size, p), dtype=np.intp)
    for col, j in enumerate(range(k - p, k)):
        t = rng.integers(0, j + 1, size=size)
        taken = (out[:, :col] == t[:, None]).any(axis=1)
        out[:, col] = np.where(taken, j, t)
    return out


def _subsets(g: Graph, p: int, samples: int | None, rng, exact_limit: int):
    """Vertex subsets used for a census and whether they are exhaustive."""
    verts = g.vertices
    k = len(verts)
    if samples is None and comb(k, p) <= exact_limit:
        return verts[_all_subsets(k, p)], True
    if rng is None:
        raise DataError("sampling needs an rng")
    return verts[sample_subsets(rng, k, p, samples or DEFAULT_SAMPLES)], False


def _star_counts(adjacency: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    p = subsets.shape[1]
    sub = adjacency[subsets[:, :, None], subsets[:, None, :]]
    return (sub.sum(axis=2) == p - 1).sum(axis=1)


def _partial_counts(adjacency, subsets, m: PartialGraphlet) -> np.ndarray:
    if m.is_star:
        return _star_counts(adjacency, subsets)
    # general masks: count vertex orderings (up to the mask's symmetry) that match
    p = m.order
    mat = m.matrix()
    care = mat >= 0
    sub = adjacency[subsets[:, :, None], subsets[:, None, :]]
    perms = list(itertools.permutations(range(p)))
    stabiliser = sum(np.array_equal(mat[np.ix_(s, s)], mat) for s in perms)
    hits = np.zeros(len(subsets))
    for s in perms:
        view = sub[:, s][:, :, s]
        hits += np.all((view == (mat == 1)) | ~care, axis=(1, 2))
    return hits / stabiliser


def _check_order(g: Graph, p: int, n: int):
    if p > n:
        raise OrderTooLarge(f"order {p} exceeds n={n}")
    if n < g.n and np.any(g.vertex_mask[n:]):
        raise DataError(f"graph has labels beyond n={n}")


def _census(g, reg, p, n, partials, samples, rng, exact_limit) -> MomentVector:
    n = g.n if n is None else n
    _check_order(g, p, n)
    stats = statistic_set(reg, p, partials)
    k = g.num_vertices
    values = np.zeros(len(stats))
    values[0] = k / n
    if k >= p:
        subsets, exhaustive = _subsets(g, p, samples, rng, exact_limit)
        scale = comb(k, p) / comb(n, p)
        classes = reg.classify_codes(p, subset_codes(g.adjacency, subsets))
        counts = np.bincount(classes, minlength=stats.num_classes)
        values[stats.class_slice] = counts / len(subsets) * scale
    for i, m in enumerate(partials):
        if k < m.order:
            continue
        if m.order == p and k >= p:
            sub = subsets
        else:
            sub, _ = _subsets(g, m.order, samples, rng, exact_limit)
        hits = _partial_counts(g.adjacency, sub, m)
        values[stats.partial_slice.start + i] = hits.mean() * comb(k, m.order) / comb(n, m.order)
    return MomentVector(stats, values)


def exact_census(g: Graph, reg: ClassRegistry, p: int, n: int | None = None, partials=()) -> MomentVector:
    """Exhaustive normalised induced-subgraph counts."""
    return _census(g, reg, p, n, tuple(partials), None, None, exact_limit=np.inf)


def sampled_census(
    g: Graph,
    reg: ClassRegistry,
    p: int,
    n: int | None,
    J: int,
    rng: np.random.Generator,
    partials=(),
) -> MomentVector:
    """Census estimated from ``J`` uniform vertex subsets of size ``p``."""
    if J < 1:
        raise DataError("J must be positive")
    if g.num_vertices < p:
        raise OrderTooLarge(f"graph has {g.num_vertices} vertices, fewer than p={p}")
    return _census(g, reg, p, n, tuple(partials), J, rng, exact_limit=0)


def census(g, reg, p, n=None, J=DEFAULT_SAMPLES, rng=None, partials=(), exact_limit=EXACT_LIMIT) -> MomentVector:
    """Exact when ``C(n_k, p) <= exact_limit``, sampled with ``J`` subsets otherwise."""
    k = g.num_vertices
    if comb(k, max([p] + [m.order for m in partials])) <= exact_limit:
        return exact_census(g, reg, p, n, partials)
    return _census(g, reg, p, n, tuple(partials), J, rng, exact_limit=0)


def partial_statistic(
    g: Graph,
    m: PartialGraphlet,
    n: int | None = None,
    J: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Expected number of embeddings of ``m`` in a uniform subset, normalised by ``C(n, p)``.

    With ``J=None`` every subset is enumerated.
    """
    p = m.order
    n = g.n if n is None else n
    _check_order(g, p, n)
    k = g.num_vertices
    if k < p:
        return 0.0
    subsets, _ = _subsets(g, p, J, rng, np.inf if J is None else 0)
    return float(_partial_counts(g.adjacency, subsets, m).mean() * comb(k, p) / comb(n, p))


def fit_universe(g: Graph, n: int) -> Graph:
    """Relabel ``g`` so that its label range is exactly ``range(n)``."""
    if g.n > n:
        g = g.compact()
    if g.n < n:
        g = g.with_max_label(n)
    return g


def _threaded(fn, graphs, rng, threads):
    # bounded chunks keep lazily produced graphs from piling up in memory
    it = iter(graphs)
    with ThreadPoolExecutor(threads) as pool:
        while chunk := list(itertools.islice(it, 4 * threads)):
            jobs = [(g, s) for g, s in zip(chunk, rng.spawn(len(chunk)))]
            yield from pool.map(lambda a: fn(*a), jobs)


def dataset_targets(
    graphs: Iterable[Graph],
    reg: ClassRegistry,
    p: int,
    n: int | None = None,
    J: int = DEFAULT_SAMPLES,
    partials=(),
    rng: np.random.Generator | None = None,
    exact_limit: int = EXACT_LIMIT,
    threads: int = 1,
    per_graph: list | None = None,
) -> MomentVector:
    """Mean census over a dataset.

    Each graph gets its own child random stream, so results do not depend on
    ``threads``.  When ``per_graph`` is a list it receives every graph's vector.
    ``graphs`` may be a lazy iterable (then ``n`` is required), in which case
    each graph is dropped once its census is taken.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    partials = tuple(partials)
    if n is None:
        if not isinstance(graphs, Sequence):
            raise ValueError("n is required when graphs is a lazy iterable")
        if len(graphs) == 0:
            raise EmptyDataset("dataset is empty")
        n = max(g.num_vertices for g in graphs)

    def one(g, stream):
        return census(fit_universe(g, n), reg, p, n, J, stream, partials, exact_limit)

    # spawning one child at a time yields the same streams as one batch spawn
    if threads > 1:
        results = _threaded(one, graphs, rng, threads)
    else:
        results = (one(g, rng.spawn(1)[0]) for g in graphs)
    total, count, stats = None, 0, None
    for r in results:
        if per_graph is not None:
            per_graph.append(r)
        total = r.values.copy() if total is None else total + r.values
        count += 1
        stats = r.stats
    if count == 0:
        raise EmptyDataset("dataset is empty")
    return MomentVector(stats, total / count)


def write_jsonl(path, vectors: Sequence[MomentVector], header: dict | None = None) -> None:
    with open(path, "w") as fh:
        for i, v in enumerate(vectors):
            row = {"graph": i, "values": v.values.tolist()}
            if header:
                row.update(header)
            fh.write(json.dumps(row) + "\n")
