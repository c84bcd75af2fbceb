"""Graphs on a fixed label universe, edge codes and the graphlet class registry.

Vertices are labelled ``0 .. n-1``.  A graph keeps a full ``n x n`` adjacency
matrix; vertices that are absent have all-zero rows and are flagged off in
``vertex_mask``.

An edge code packs the upper triangle of a ``p x p`` adjacency matrix into an
integer.  Pairs are enumerated row-major, ``(0,1), (0,2), ..., (0,p-1), (1,2),
...``, and pair ``k`` is stored in bit ``k`` (least significant bit first).
"""

from __future__ import annotations

import io
import itertools
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from gmoe.errors import DataError, MissingVertex, UnsupportedOrder

MAX_ORDER = 8
DEFAULT_DENSE_ORDER = 6
REGISTRY_MAGIC = b"GMOE"
REGISTRY_VERSION = 1


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph whose vertices are a subset of ``range(n)``."""

    adjacency: np.ndarray
    vertex_mask: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        mask = np.asarray(self.vertex_mask, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise DataError(f"adjacency must be square, got shape {adj.shape}")
        if mask.shape != (adj.shape[0],):
            raise DataError("vertex_mask length does not match adjacency")
        if adj.shape[0] < 1:
            raise DataError("a graph needs n >= 1")
        if np.any(np.diagonal(adj)):
            raise DataError("self-loops are not allowed")
        if adj.shape[0] <= 2048 and not np.array_equal(adj, adj.T):
            raise DataError("adjacency must be symmetric")
        if np.any(adj[~mask]):
            raise DataError("edge endpoint outside vertex_mask")
        adj = adj.copy() if adj is self.adjacency else adj
        mask = mask.copy() if mask is self.vertex_mask else mask
        adj.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "vertex_mask", mask)

    @classmethod
    def _wrap(cls, adjacency: np.ndarray, vertex_mask: np.ndarray) -> "Graph":
        """Take ownership of arrays known to be valid, skipping checks and copies."""
        g = object.__new__(cls)
        adjacency.flags.writeable = False
        vertex_mask.flags.writeable = False
        object.__setattr__(g, "adjacency", adjacency)
        object.__setattr__(g, "vertex_mask", vertex_mask)
        return g

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], vertices=None) -> "Graph":
        adj = np.zeros((n, n), dtype=bool)
        for u, v in edges:
            if u == v:
                raise DataError(f"self-loop at vertex {u}")
            adj[u, v] = adj[v, u] = True
        if vertices is None:
            mask = np.ones(n, dtype=bool)
        else:
            mask = np.zeros(n, dtype=bool)
            mask[list(vertices)] = True
        return cls(adj, mask)

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(np.zeros((n, n), dtype=bool), np.ones(n, dtype=bool))

    @classmethod
    def complete(cls, n: int) -> "Graph":
        adj = ~np.eye(n, dtype=bool)
        return cls(adj, np.ones(n, dtype=bool))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def vertices(self) -> np.ndarray:
        return np.flatnonzero(self.vertex_mask)

    @property
    def num_vertices(self) -> int:
        return int(self.vertex_mask.sum())

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(self.adjacency)) // 2

    def edges(self) -> np.ndarray:
        """Edges as an ``(m, 2)`` array with ``u < v``."""
        u, v = np.nonzero(np.triu(self.adjacency, 1))
        return np.column_stack([u, v])

    def degrees(self) -> np.ndarray:
        """Degrees of the present vertices, in label order."""
        return self.adjacency[self.vertex_mask].sum(axis=1)

    def compact(self) -> "Graph":
        """Same graph with present vertices relabelled ``0 .. k-1`` in order."""
        if self.vertex_mask.all():
            return self
        idx = self.vertices
        return Graph._wrap(self.adjacency[np.ix_(idx, idx)], np.ones(len(idx), dtype=bool))

    def with_max_label(self, n: int) -> "Graph":
        """Embed a compact graph into the universe ``range(n)``."""
        k = self.n
        if n < k:
            raise DataError(f"cannot embed a {k}-label graph into {n} labels")
        adj = np.zeros((n, n), dtype=bool)
        adj[:k, :k] = self.adjacency
        mask = np.zeros(n, dtype=bool)
        mask[:k] = self.vertex_mask
        return Graph(adj, mask)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency) and np.array_equal(
            self.vertex_mask, other.vertex_mask
        )

    __hash__ = None

    def __repr__(self):
        return f"Graph(n={self.n}, vertices={self.num_vertices}, edges={self.num_edges})"


def relabel(g: Graph, s: Sequence[int]) -> Graph:
    """Relabelled graph ``s . g``: vertex ``i`` becomes ``s[i]``."""
    s = np.asarray(s, dtype=np.intp)
    if s.shape != (g.n,) or not np.array_equal(np.sort(s), np.arange(g.n)):
        raise DataError("s must be a permutation of range(n)")
    inv = np.empty_like(s)
    inv[s] = np.arange(g.n)
    return Graph(g.adjacency[np.ix_(inv, inv)], g.vertex_mask[inv])


# ---------------------------------------------------------------------------
# edge codes


@lru_cache(maxsize=None)
def pair_index(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major upper-triangle pairs ``(rows, cols)`` for order ``p``."""
    rows, cols = np.triu_indices(p, 1)
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


def num_pairs(p: int) -> int:
    return p * (p - 1) // 2


@dataclass(frozen=True)
class EdgeCode:
    order: int
    bits: int

    def __post_init__(self):
        if not 1 <= self.order <= MAX_ORDER:
            raise UnsupportedOrder(f"edge codes support orders 1..{MAX_ORDER}, got {self.order}")
        if not 0 <= self.bits < (1 << num_pairs(self.order)):
            raise DataError(f"bits {self.bits} out of range for order {self.order}")

    @classmethod
    def from_matrix(cls, a) -> "EdgeCode":
        a = np.asarray(a, dtype=bool)
        p = a.shape[0]
        return cls(p, int(encode_matrices(a[None])[0]))

    def to_matrix(self) -> np.ndarray:
        return decode_codes(self.order, np.array([self.bits]))[0]

    def hex(self) -> str:
        width = max(1, (num_pairs(self.order) + 3) // 4)
        return f"{self.bits:0{width}x}"

    @property
    def num_edges(self) -> int:
        return bin(self.bits).count("1")


def encode_matrices(a: np.ndarray) -> np.ndarray:
    """Codes of a stack of ``(B, p, p)`` adjacency matrices."""
    p = a.shape[-1]
    rows, cols = pair_index(p)
    bits = a[..., rows, cols].astype(np.int64)
    return bits @ (np.int64(1) << np.arange(len(rows), dtype=np.int64))


def decode_codes(p: int, codes) -> np.ndarray:
    """Inverse of :func:`encode_matrices`: ``(B,)`` codes to ``(B, p, p)`` booleans."""
    codes = np.asarray(codes, dtype=np.int64)
    rows, cols = pair_index(p)
    bits = (codes[:, None] >> np.arange(len(rows), dtype=np.int64)) & 1
    out = np.zeros((len(codes), p, p), dtype=bool)
    out[:, rows, cols] = bits.astype(bool)
    out[:, cols, rows] = bits.astype(bool)
    return out


def code_bits(p: int, codes) -> np.ndarray:
    """``(B, p(p-1)/2)`` 0/1 matrix of the bits of each code."""
    codes = np.asarray(codes, dtype=np.int64)
    return ((codes[..., None] >> np.arange(num_pairs(p), dtype=np.int64)) & 1).astype(np.int8)


def subset_codes(adjacency: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """Edge codes of the subgraphs induced by the rows of ``subsets``.

    ``subsets`` is ``(B, p)``; position ``a`` of a row is rank ``a`` of the code.
    """
    subsets = np.asarray(subsets)
    p = subsets.shape[1]
    code = np.zeros(len(subsets), dtype=np.int64)
    for k, (a, b) in enumerate(zip(*pair_index(p))):
        code |= adjacency[subsets[:, a], subsets[:, b]].astype(np.int64) << k
    return code


def induced_subgraph(g: Graph, w: Sequence[int]) -> EdgeCode:
    w = np.asarray(w, dtype=np.intp)
    if np.any(w < 0) or np.any(w >= g.n) or not np.all(g.vertex_mask[w]):
        raise MissingVertex(f"subset {w.tolist()} is not contained in the vertex set")
    if len(np.unique(w)) != len(w):
        raise DataError("subset has repeated vertices")
    return EdgeCode(len(w), int(subset_codes(g.adjacency, w[None])[0]))


def permute_codes(p: int, codes, ordering) -> np.ndarray:
    """Codes after reordering vertices: new position ``a`` holds old vertex ``ordering[a]``."""
    codes = np.asarray(codes, dtype=np.int64)
    ordering = np.asarray(ordering)
    rows, cols = pair_index(p)
    lookup = np.zeros((p, p), dtype=np.int64)
    lookup[rows, cols] = np.arange(len(rows))
    lookup[cols, rows] = np.arange(len(rows))
    out = np.zeros_like(codes)
    for k, (a, b) in enumerate(zip(rows, cols)):
        src = lookup[ordering[a], ordering[b]]
        out |= ((codes >> src) & 1) << k
    return out


# ---------------------------------------------------------------------------
# canonical forms


def _refined_cells(a: np.ndarray) -> list[np.ndarray]:
    """Colour refinement of a small adjacency matrix; cells in canonical colour order."""
    p = a.shape[0]
    colors = a.sum(axis=1)
    while True:
        sig = [(int(colors[v]), tuple(sorted(colors[a[v]].tolist()))) for v in range(p)]
        uniq = sorted(set(sig))
        new = np.array([uniq.index(s) for s in sig])
        if len(uniq) == len(np.unique(colors)):
            colors = new
            break
        colors = new
    return [np.flatnonzero(colors == c) for c in range(colors.max() + 1)]


def _cell_orderings(cells: list[np.ndarray]) -> np.ndarray:
    parts = [np.array(list(itertools.permutations(c.tolist()))) for c in cells]
    out = parts[0]
    for part in parts[1:]:
        out = np.concatenate(
            [np.repeat(out, len(part), axis=0), np.tile(part, (len(out), 1))], axis=1
        )
    return out


def canonical_search(p: int, code: int) -> tuple[int, int]:
    """Canonical code and automorphism count via refined permutation search.

    Only orderings that respect the colour-refinement cells are tried; the
    cells are isomorphism invariant so the minimum over them is canonical.
    """
    a = decode_codes(p, [code])[0]
    orderings = _cell_orderings(_refined_cells(a))
    rows, cols = pair_index(p)
    bits = a[orderings[:, rows], orderings[:, cols]].astype(np.int64)
    values = bits @ (np.int64(1) << np.arange(len(rows), dtype=np.int64))
    best = int(values.min())
    return best, int(np.count_nonzero(values == best))


@dataclass(frozen=True)
class GraphletClass:
    order: int
    class_id: int
    canonical_code: EdgeCode
    class_size: int

    @property
    def num_edges(self) -> int:
        return self.canonical_code.num_edges


@dataclass
class OrderTable:
    """Dense lookup for one order: every code maps to a class id."""

    order: int
    class_of: np.ndarray
    canonical: np.ndarray
    sizes: np.ndarray
    _members: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def num_classes(self) -> int:
        return len(self.canonical)

    def members(self, class_id: int) -> np.ndarray:
        """All codes in a class, i.e. the distinct adjacency matrices of that shape."""
        if self._members is None:
            order = np.argsort(self.class_of, kind="stable")
            bounds = np.cumsum(self.sizes)[:-1]
            self._members = np.split(order.astype(np.int64), bounds)
        return self._members[class_id]


def _build_dense(p: int) -> OrderTable:
    m = num_pairs(p)
    codes = np.arange(1 << m, dtype=np.int64)
    canon = codes.copy()
    for ordering in itertools.permutations(range(p)):
        np.minimum(canon, permute_codes(p, codes, ordering), out=canon)
    reps = np.unique(canon)
    edge_counts = np.array([bin(int(c)).count("1") for c in reps])
    reps = reps[np.lexsort((reps, edge_counts))]
    index = np.full(1 << m, -1, dtype=np.int32)
    index[reps] = np.arange(len(reps), dtype=np.int32)
    class_of = index[canon]
    sizes = np.bincount(class_of, minlength=len(reps)).astype(np.int64)
    return OrderTable(p, class_of, reps, sizes)


class ClassRegistry:
    """Graphlet classes per order.

    Orders up to ``dense_order`` get a dense table built by exhaustive
    permutation minimisation.  Larger orders (up to 8) are canonicalised on
    demand and use the canonical code itself as the class id.
    """

    def __init__(self, tables: dict[int, OrderTable], max_order: int):
        self.tables = tables
        self.max_order = max_order
        self.dense_order = max(tables) if tables else 1
        self._sparse: dict[tuple[int, int], tuple[int, int]] = {}

    def _check(self, p: int):
        if not 2 <= p <= self.max_order:
            raise UnsupportedOrder(f"order {p} outside registry range 2..{self.max_order}")

    def is_dense(self, p: int) -> bool:
        return p in self.tables

    def table(self, p: int) -> OrderTable:
        self._check(p)
        if p not in self.tables:
            raise UnsupportedOrder(f"order {p} has no dense table (dense up to {self.dense_order})")
        return self.tables[p]

    def num_classes(self, p: int) -> int:
        return self.table(p).num_classes

    def classes(self, p: int) -> list[GraphletClass]:
        t = self.table(p)
        return [
            GraphletClass(p, i, EdgeCode(p, int(c)), int(s))
            for i, (c, s) in enumerate(zip(t.canonical, t.sizes))
        ]

    def classify_codes(self, p: int, codes) -> np.ndarray:
        """Vectorised class lookup for dense orders."""
        return self.table(p).class_of[np.asarray(codes, dtype=np.int64)]

    def canonical(self, code: EdgeCode) -> tuple[int, int]:
        """``(canonical bits, class size)`` for any supported order."""
        p = code.order
        self._check(p)
        if p in self.tables:
            t = self.tables[p]
            cid = t.class_of[code.bits]
            return int(t.canonical[cid]), int(t.sizes[cid])
        key = (p, code.bits)
        if key not in self._sparse:
            best, n_aut = canonical_search(p, code.bits)
            self._sparse[key] = (best, math.factorial(p) // n_aut)
        return self._sparse[key]

    def class_size(self, code: EdgeCode) -> int:
        return self.canonical(code)[1]

    # -- persistence ----------------------------------------------------

    def dump(self, path) -> None:
        buf = io.BytesIO()
        buf.write(REGISTRY_MAGIC)
        buf.write(struct.pack("<HBB", REGISTRY_VERSION, self.max_order, len(self.tables)))
        for p in sorted(self.tables):
            t = self.tables[p]
            buf.write(struct.pack("<BI", p, t.num_classes))
            buf.write(t.class_of.astype("<i4").tobytes())
            buf.write(t.canonical.astype("<i8").tobytes())
            buf.write(t.sizes.astype("<i8").tobytes())
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "ClassRegistry":
        data = Path(path).read_bytes()
        if data[:4] != REGISTRY_MAGIC:
            raise DataError(f"{path}: not a registry file")
        version, max_order, count = struct.unpack_from("<HBB", data, 4)
        if version != REGISTRY_VERSION:
            raise DataError(f"{path}: unsupported registry version {version}")
        off = 8
        tables = {}
        for _ in range(count):
            p, k = struct.unpack_from("<BI", data, off)
            off += 5
            size = 1 << num_pairs(p)
            class_of = np.frombuffer(data, "<i4", size, off).astype(np.int32)
            off += 4 * size
            canonical = np.frombuffer(data, "<i8", k, off).astype(np.int64)
            off += 8 * k
            sizes = np.frombuffer(data, "<i8", k, off).astype(np.int64)
            off += 8 * k
            tables[p] = OrderTable(p, class_of, canonical, sizes)
        return cls(tables, max_order)


_REGISTRY_CACHE: dict[tuple[int, int], ClassRegistry] = {}


def build_registry(max_order: int = DEFAULT_DENSE_ORDER, dense_order: int = DEFAULT_DENSE_ORDER) -> ClassRegistry:
    """Registry for orders ``2..max_order``; results are cached per process."""
    if max_order > MAX_ORDER:
        raise UnsupportedOrder(f"max_order {max_order} > {MAX_ORDER}")
    if max_order < 2:
        raise UnsupportedOrder("max_order must be at least 2")
    dense_order = min(dense_order, max_order)
    key = (max_order, dense_order)
    if key not in _REGISTRY_CACHE:
        tables = {p: _build_dense(p) for p in range(2, dense_order + 1)}
        _REGISTRY_CACHE[key] = ClassRegistry(tables, max_order)
    return _REGISTRY_CACHE[key]


def classify(reg: ClassRegistry, code: EdgeCode) -> int:
    """Class id of a code.  Dense orders give a dense index; larger orders the canonical bits."""
    if reg.is_dense(code.order):
        return int(reg.tables[code.order].class_of[code.bits])
    return reg.canonical(code)[0]
