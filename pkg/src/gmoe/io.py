"""Graph file formats: TU benchmark triplets and blank-line separated edge lists."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from gmoe.errors import DataError, EmptyDataset, InconsistentIndicator, ParseError
from gmoe.graphs import Graph

_SEP = re.compile(r"[,\s]+")


def _int_rows(path: Path, width: int):
    """Yield ``(line_number, ints)`` for non-blank lines split on commas and/or whitespace."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            parts = [p for p in _SEP.split(text) if p]
            try:
                vals = [int(p) for p in parts]
            except ValueError:
                raise ParseError(f"expected integers, got {text!r}", path, lineno) from None
            if len(vals) != width:
                raise ParseError(f"expected {width} values, got {len(vals)}", path, lineno)
            yield lineno, vals


def load_tu_dataset(directory, name: str, label: int | None = None) -> list[Graph]:
    """Read ``<name>_A.txt`` and ``<name>_graph_indicator.txt`` from ``directory``.

    Node ids are 1-indexed and global; each graph's vertices are relabelled
    ``0 .. k-1`` in id order.  With ``label`` set, only graphs whose entry in
    ``<name>_graph_labels.txt`` equals it are returned.
    """
    directory = Path(directory)
    a_path = directory / f"{name}_A.txt"
    ind_path = directory / f"{name}_graph_indicator.txt"
    for p in (a_path, ind_path):
        if not p.exists():
            raise DataError(f"missing TU file {p}")

    indicator = []
    for lineno, (gid,) in _int_rows(ind_path, 1):
        if gid < 1:
            raise ParseError("graph ids are 1-indexed", ind_path, lineno)
        indicator.append(gid)
    if not indicator:
        raise EmptyDataset(f"{ind_path} lists no nodes")
    indicator = np.asarray(indicator)
    n_graphs = int(indicator.max())
    sizes = np.bincount(indicator, minlength=n_graphs + 1)[1:]
    # local index of each node inside its graph (nodes of one graph need not be contiguous)
    order = np.argsort(indicator, kind="stable")
    local = np.empty(len(indicator), dtype=np.intp)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    local[order] = np.arange(len(indicator)) - np.repeat(starts, sizes)

    edges: list[list[tuple[int, int]]] = [[] for _ in range(n_graphs)]
    for lineno, (u, v) in _int_rows(a_path, 2):
        if not (1 <= u <= len(indicator) and 1 <= v <= len(indicator)):
            raise ParseError(f"node id out of range 1..{len(indicator)}", a_path, lineno)
        gu, gv = indicator[u - 1], indicator[v - 1]
        if gu != gv:
            raise InconsistentIndicator(f"{a_path}:{lineno}: edge ({u}, {v}) joins graphs {gu} and {gv}")
        if u != v:
            edges[gu - 1].append((local[u - 1], local[v - 1]))

    keep = np.ones(n_graphs, dtype=bool)
    if label is not None:
        lab_path = directory / f"{name}_graph_labels.txt"
        if not lab_path.exists():
            raise DataError(f"missing TU file {lab_path}")
        labels = [v for _, (v,) in _int_rows(lab_path, 1)]
        if len(labels) != n_graphs:
            raise InconsistentIndicator(f"{lab_path}: {len(labels)} labels for {n_graphs} graphs")
        keep = np.asarray(labels) == label
    return [Graph.from_edges(int(sizes[i]), edges[i]) for i in range(n_graphs) if keep[i]]


def write_tu_dataset(directory, name: str, graphs: Iterable[Graph], labels: Sequence[int] | None = None) -> None:
    """Inverse of :func:`load_tu_dataset` (absent vertices are dropped)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    offset = 0
    with open(directory / f"{name}_A.txt", "w") as fa, open(directory / f"{name}_graph_indicator.txt", "w") as fi:
        for gid, g in enumerate(graphs, 1):
            c = g.compact()
            for u, v in c.edges():
                fa.write(f"{u + 1 + offset}, {v + 1 + offset}\n")
                fa.write(f"{v + 1 + offset}, {u + 1 + offset}\n")
            fi.write(f"{gid}\n" * c.n)
            offset += c.n
    if labels is not None:
        with open(directory / f"{name}_graph_labels.txt", "w") as fl:
            fl.writelines(f"{int(v)}\n" for v in labels)


def write_edgelist(path, graphs: Iterable[Graph], header: dict | None = None) -> int:
    """One ``u v`` line per edge (1-indexed), graphs separated by blank lines.

    Each graph starts with a ``# graph <i> nodes=<k>`` comment so that isolated
    vertices survive a round trip.  Returns the number of graphs written.
    """
    count = 0
    with open(path, "w") as fh:
        for k, v in sorted((header or {}).items()):
            fh.write(f"# {k}={v}\n")
        for i, g in enumerate(graphs):
            c = g.compact()
            if i:
                fh.write("\n")
            fh.write(f"# graph {i} nodes={c.n}\n")
            for u, v in c.edges():
                fh.write(f"{u + 1} {v + 1}\n")
            count += 1
    return count


_NODES = re.compile(r"#\s*graph\s+\d+\s+nodes=(\d+)")


def read_edgelist(path) -> list[Graph]:
    """Parse :func:`write_edgelist` output; without node headers the size is the largest label."""
    path = Path(path)
    graphs: list[Graph] = []
    block: list[tuple[int, int]] = []
    nodes: int | None = None
    started = False

    def flush():
        nonlocal block, nodes, started
        if started:
            k = nodes if nodes is not None else max((max(e) for e in block), default=0)
            graphs.append(Graph.from_edges(k, [(u - 1, v - 1) for u, v in block]))
        block, nodes, started = [], None, False

    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                flush()
                continue
            if text.startswith("#"):
                m = _NODES.match(text)
                if m:
                    if started:
                        flush()
                    nodes, started = int(m.group(1)), True
                continue
            parts = text.split()
            try:
                u, v = (int(x) for x in parts)
            except ValueError:
                raise ParseError(f"expected 'u v', got {text!r}", path, lineno) from None
            if u < 1 or v < 1:
                raise ParseError("edge-list labels are 1-indexed", path, lineno)
            if nodes is not None and max(u, v) > nodes:
                raise ParseError(f"label exceeds declared nodes={nodes}", path, lineno)
            block.append((u, v))
            started = True
    flush()
    return graphs


def read_header(path) -> dict:
    """Leading ``# key=value`` lines of a text artifact."""
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body and not body.startswith("graph "):
                k, v = body.split("=", 1)
                out[k.strip()] = v.strip()
    return out
