"""Comparisons between generated and reference graph samples."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from gmoe.census import EXACT_LIMIT, MomentVector, StatisticSet, census, dataset_targets, fit_universe
from gmoe.errors import EmptyDataset, InsufficientData
from gmoe.generator import mlp_backward, mlp_forward
from gmoe.graphs import ClassRegistry, Graph

STATISTICS = ("degree", "clustering", "orbit")


@dataclass
class GraphletDifference:
    labels: list[str]
    target: np.ndarray
    generated: np.ndarray

    @property
    def per_class(self) -> list[float]:
        return [abs(float(g) - float(t)) for g, t in zip(self.generated, self.target)]

    @property
    def total(self) -> float:
        # plain left-to-right sum so the CSV rows add up to the same float
        return sum(self.per_class)

    @property
    def max(self) -> float:
        return max(self.per_class)


@dataclass
class EvalReport:
    total_difference: float
    max_difference: float
    mmd_degree: float | None = None
    mmd_clustering: float | None = None
    mmd_orbit: float | None = None
    classifier_rate: float | None = None
    n_generated: int = 0
    n_reference: int = 0
    seeds: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    difference: GraphletDifference | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("difference")
        return out

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_csv(self, path) -> None:
        """Per-statistic rows; ``abs_difference`` sums to ``total_difference`` exactly."""
        if self.difference is None:
            raise EmptyDataset("report has no per-class differences")
        d = self.difference
        with open(path, "w", newline="") as fh:
            for k, v in sorted(self.meta.items()):
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["statistic", "target", "generated", "abs_difference"])
            for label, t, g, a in zip(d.labels, d.target, d.generated, d.per_class):
                w.writerow([label, repr(float(t)), repr(float(g)), repr(a)])


# ---------------------------------------------------------------------------
# graphlet moments


def graphlet_difference(
    gen_graphs: Sequence[Graph],
    targets: MomentVector,
    reg: ClassRegistry,
    p: int | None = None,
    n: int | None = None,
    J: int = 100_000,
    rng=None,
    exact_limit: int = EXACT_LIMIT,
    threads: int = 1,
) -> GraphletDifference:
    """Mean census of ``gen_graphs`` against ``targets``, statistic by statistic.

    ``gen_graphs`` may be a lazy iterable when ``n`` is given.
    """
    if isinstance(gen_graphs, Sequence) and len(gen_graphs) == 0:
        raise EmptyDataset("no generated graphs to evaluate")
    stats = targets.stats
    p = stats.order if p is None else p
    rng = np.random.default_rng() if rng is None else rng
    gen = dataset_targets(
        gen_graphs, reg, p, n=n, J=J, partials=stats.partials, rng=rng, exact_limit=exact_limit, threads=threads
    )
    return GraphletDifference(stats.labels(), np.asarray(targets.values), np.asarray(gen.values))


# ---------------------------------------------------------------------------
# MMD


def degree_histograms(graphs: Sequence[Graph], bins: int | None = None) -> np.ndarray:
    """Normalized degree histograms on a shared range ``0..bins-1`` (retained vertices only)."""
    degs = [g.degrees() for g in graphs]
    if bins is None:
        bins = 1 + max((int(d.max()) if len(d) else 0) for d in degs)
    out = np.zeros((len(graphs), bins))
    for i, d in enumerate(degs):
        if len(d):
            out[i] = np.bincount(d, minlength=bins)[:bins] / len(d)
    return out


def _class_features(g: Graph, reg: ClassRegistry, order: int, J: int, rng) -> np.ndarray:
    """Class frequencies of order ``order`` among present vertices (zeros if too few)."""
    if g.num_vertices < order:
        return np.zeros(reg.num_classes(order))
    return census(g.compact(), reg, order, J=J, rng=rng).classes


def _triangle_frequency(g: Graph, reg: ClassRegistry, J: int, rng) -> float:
    if g.num_vertices < 3:
        return 0.0
    v = census(g.compact(), reg, 3, J=J, rng=rng)
    return float(v.classes[-1])


def graph_features(graphs: Sequence[Graph], statistic: str, reg: ClassRegistry, J: int = 20_000, rng=None) -> np.ndarray:
    rng = np.random.default_rng(0) if rng is None else rng
    if statistic == "clustering":
        return np.array([[_triangle_frequency(g, reg, J, rng)] for g in graphs])
    if statistic == "orbit":
        return np.array([_class_features(g, reg, 4, J, rng) for g in graphs])
    raise ValueError(f"unknown statistic {statistic!r}")


def _gauss(d2, sigma):
    return np.exp(-d2 / (2.0 * sigma * sigma))


def mmd_from_features(fa: np.ndarray, fb: np.ndarray, sigma: float = 1.0, metric: str = "euclidean") -> float:
    """Squared MMD (biased V-statistic) with a Gaussian kernel on feature distances."""
    def dist2(x, y):
        if metric == "tv":
            d = 0.5 * np.abs(x[:, None, :] - y[None, :, :]).sum(axis=-1)
            return d * d
        return ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)

    kaa = _gauss(dist2(fa, fa), sigma).mean()
    kbb = _gauss(dist2(fb, fb), sigma).mean()
    kab = _gauss(dist2(fa, fb), sigma).mean()
    return float(kaa + kbb - 2.0 * kab)


def mmd(
    sample_a: Sequence[Graph],
    sample_b: Sequence[Graph],
    statistic: str = "degree",
    sigma: float = 1.0,
    reg: ClassRegistry | None = None,
    J: int = 20_000,
    rng=None,
) -> float:
    if len(sample_a) == 0 or len(sample_b) == 0:
        raise EmptyDataset("mmd needs two nonempty samples")
    if statistic == "degree":
        h = degree_histograms(list(sample_a) + list(sample_b))
        return mmd_from_features(h[: len(sample_a)], h[len(sample_a) :], sigma, "tv")
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    if reg is None:
        from gmoe.graphs import build_registry

        reg = build_registry(6)
    fa = graph_features(sample_a, statistic, reg, J, rng)
    fb = graph_features(sample_b, statistic, reg, J, rng)
    return mmd_from_features(fa, fb, sigma)


def self_mmd(graphs: Sequence[Graph], rng, statistic: str = "degree", **kw) -> float:
    """MMD between two random halves of one sample."""
    idx = rng.permutation(len(graphs))
    half = len(graphs) // 2
    return mmd([graphs[i] for i in idx[:half]], [graphs[i] for i in idx[half:]], statistic, **kw)


# ---------------------------------------------------------------------------
# discriminator probe


@dataclass
class ProbeConfig:
    hidden: tuple[int, int] = (32, 32)
    epochs: int = 200
    train_frac: float = 0.7
    lr: float = 1e-2
    batch: int = 32
    seeds: int = 5


def _init_layers(sizes, rng):
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / (a + b))
        layers.append((rng.uniform(-lim, lim, size=(a, b)), np.zeros(b)))
    return layers


def train_probe(X: np.ndarray, y: np.ndarray, cfg: ProbeConfig, rng) -> list:
    """Two-hidden-layer logistic classifier trained with Adam on the mean log loss."""
    layers = _init_layers([X.shape[1], *cfg.hidden, 1], rng)
    m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
    v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
    b1, b2, t = 0.9, 0.999, 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), cfg.batch):
            idx = order[start : start + cfg.batch]
            out, acts, pre = mlp_forward(layers, X[idx])
            g_out = (expit(out[:, 0]) - y[idx])[:, None] / len(idx)
            grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
            mlp_backward(layers, acts, pre, g_out, grads)
            t += 1
            for i, (g_pair, m_pair, v_pair) in enumerate(zip(grads, m, v)):
                for g, mm, vv in zip(g_pair, m_pair, v_pair):
                    mm *= b1
                    mm += (1 - b1) * g
                    vv *= b2
                    vv += (1 - b2) * g * g
                step = [
                    cfg.lr * (mm / (1 - b1**t)) / (np.sqrt(vv / (1 - b2**t)) + 1e-8)
                    for mm, vv in zip(m_pair, v_pair)
                ]
                layers[i] = (layers[i][0] - step[0], layers[i][1] - step[1])
    return layers


def probe_predict(layers, X) -> np.ndarray:
    out, _, _ = mlp_forward(layers, X)
    return (out[:, 0] > 0).astype(float)


def probe_features(graphs: Iterable[Graph], reg: ClassRegistry, order: int, J: int = 20_000, rng=None) -> np.ndarray:
    rng = np.random.default_rng(0) if rng is None else rng
    return np.array([_class_features(g, reg, order, J, rng) for g in graphs])


def _grouped_split(X: np.ndarray, y: np.ndarray, train_frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Stratified split that keeps identical feature rows on the same side.

    Without grouping, a graph present in both samples can be memorised with one
    label and scored with the other, which pushes accuracy below chance.
    """
    _, group = np.unique(X, axis=0, return_inverse=True)
    group = group.ravel()
    want = {c: int(round(train_frac * np.sum(y == c))) for c in (0.0, 1.0)}
    have = {0.0: 0, 1.0: 0}
    train = np.zeros(len(X), dtype=bool)
    for g in rng.permutation(group.max() + 1):
        members = np.flatnonzero(group == g)
        counts = {c: int(np.sum(y[members] == c)) for c in (0.0, 1.0)}
        if all(have[c] + counts[c] <= want[c] for c in (0.0, 1.0)):
            train[members] = True
            for c in (0.0, 1.0):
                have[c] += counts[c]
    return np.flatnonzero(train), np.flatnonzero(~train)


def probe_accuracy(Xa: np.ndarray, Xb: np.ndarray, cfg: ProbeConfig, rng, shuffle_labels: bool = False) -> float:
    """Held-out accuracy of one probe run on precomputed feature matrices."""
    if len(Xa) < 10 or len(Xb) < 10:
        raise InsufficientData("the probe needs at least 10 graphs per class")
    X = np.vstack([Xa, Xb])
    y = np.concatenate([np.zeros(len(Xa)), np.ones(len(Xb))])
    if shuffle_labels:
        y = rng.permutation(y)
    tr, te = _grouped_split(X, y, cfg.train_frac, rng)
    mu = X[tr].mean(axis=0)
    sd = X[tr].std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    layers = train_probe(Z[tr], y[tr], cfg, rng)
    return float(np.mean(probe_predict(layers, Z[te]) == y[te]))


def discriminator_probe(
    real_graphs: Sequence[Graph],
    gen_graphs: Sequence[Graph],
    reg: ClassRegistry,
    probe_order: int,
    rng,
    cfg: ProbeConfig | None = None,
    J: int = 20_000,
    shuffle_labels: bool = False,
) -> float:
    """Median held-out accuracy over ``cfg.seeds`` independent probe runs (0.5 is ideal).

    Both samples may be lazy iterables; only their feature rows are kept.
    """
    cfg = ProbeConfig() if cfg is None else cfg
    for sample in (real_graphs, gen_graphs):
        if isinstance(sample, Sequence) and len(sample) < 10:
            raise InsufficientData("the probe needs at least 10 graphs per class")
    if probe_order > reg.max_order:
        raise InsufficientData(f"probe order {probe_order} exceeds the registry maximum {reg.max_order}")
    Xa = probe_features(real_graphs, reg, probe_order, J, rng)
    Xb = probe_features(gen_graphs, reg, probe_order, J, rng)
    return probe_from_features(Xa, Xb, cfg, rng, shuffle_labels)


def probe_from_features(Xa: np.ndarray, Xb: np.ndarray, cfg: ProbeConfig, rng, shuffle_labels: bool = False) -> float:
    """Median of ``cfg.seeds`` probe runs on precomputed feature matrices."""
    runs = [probe_accuracy(Xa, Xb, cfg, child, shuffle_labels) for child in rng.spawn(cfg.seeds)]
    return float(np.median(runs))


# ---------------------------------------------------------------------------
# one-pass summaries


@dataclass
class SampleSummary:
    """Per-graph quantities gathered in a single pass over a sample.

    Every comparison in a report can be computed from these, so a sample of
    very large graphs never has to be held in memory.
    """

    stats: StatisticSet | None
    moments: np.ndarray
    probe: np.ndarray | None
    degree_counts: list[np.ndarray]
    clustering: np.ndarray | None
    orbit: np.ndarray | None

    def __len__(self) -> int:
        return len(self.degree_counts)

    def mean_moments(self) -> MomentVector:
        return MomentVector(self.stats, self.moments.mean(axis=0))

    def degree_histograms(self, bins: int) -> np.ndarray:
        out = np.zeros((len(self), bins))
        for i, c in enumerate(self.degree_counts):
            if c.sum():
                out[i, : min(bins, len(c))] = c[:bins] / c.sum()
        return out

    def pooled_degree_counts(self) -> np.ndarray:
        top = max(len(c) for c in self.degree_counts)
        return sum(np.pad(c, (0, top - len(c))) for c in self.degree_counts)

    def max_degree(self) -> int:
        return max(len(c) for c in self.degree_counts) - 1


def summarize(
    graphs: Iterable[Graph],
    reg: ClassRegistry,
    rng,
    order: int | None = None,
    n: int | None = None,
    partials=(),
    probe_order: int | None = None,
    mmd_features: bool = True,
    J: int = 20_000,
    exact_limit: int = EXACT_LIMIT,
) -> SampleSummary:
    """Census, probe features, degree counts and MMD features of each graph.

    The census at ``order`` uses the label universe ``range(n)``; the other
    features look at present vertices only.  Each graph gets its own child stream.
    """
    partials = tuple(partials)
    moments, probe, degs, clus, orbit = [], [], [], [], []
    stats = None
    for g in graphs:
        stream = rng.spawn(1)[0]
        if order is not None:
            v = census(fit_universe(g, n or g.n), reg, order, n or g.n, J, stream, partials, exact_limit)
            moments.append(v.values)
            stats = v.stats
        c = g.compact()
        if probe_order is not None:
            probe.append(_class_features(c, reg, probe_order, J, stream))
        d = c.degrees()
        degs.append(np.bincount(d) if len(d) else np.zeros(1, dtype=np.int64))
        if mmd_features:
            clus.append([_triangle_frequency(c, reg, J, stream)])
            orbit.append(_class_features(c, reg, 4, J, stream))
    if not degs:
        raise EmptyDataset("cannot summarize an empty sample")
    return SampleSummary(
        stats,
        np.array(moments) if moments else np.zeros((len(degs), 0)),
        np.array(probe) if probe_order is not None else None,
        degs,
        np.array(clus) if mmd_features else None,
        np.array(orbit) if mmd_features else None,
    )


def summary_difference(summary: SampleSummary, targets: MomentVector) -> GraphletDifference:
    if summary.stats is None:
        raise EmptyDataset("summary has no census moments")
    if len(summary.stats) != len(targets.values):
        raise ValueError("summary and targets use different statistic sets")
    return GraphletDifference(targets.stats.labels(), np.asarray(targets.values), summary.mean_moments().values)


def summary_mmd(a: SampleSummary, b: SampleSummary, statistic: str = "degree", sigma: float = 1.0) -> float:
    if statistic == "degree":
        bins = 1 + max(a.max_degree(), b.max_degree())
        return mmd_from_features(a.degree_histograms(bins), b.degree_histograms(bins), sigma, "tv")
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    fa, fb = getattr(a, statistic), getattr(b, statistic)
    if fa is None or fb is None:
        raise EmptyDataset("summaries were built without MMD features")
    return mmd_from_features(fa, fb, sigma)


# ---------------------------------------------------------------------------
# plot data


def degree_histogram_rows(graphs: Sequence[Graph]) -> list[tuple[int, int]]:
    """Pooled ``(degree, count)`` pairs over retained vertices."""
    if not graphs:
        return []
    counts = np.bincount(np.concatenate([g.degrees() for g in graphs]))
    return [(i, int(c)) for i, c in enumerate(counts)]


def write_degree_histogram(path, graphs: Sequence[Graph], meta: dict | None = None) -> None:
    write_degree_counts(path, np.array([c for _, c in degree_histogram_rows(graphs)], dtype=np.int64), meta)


def write_degree_counts(path, counts: np.ndarray, meta: dict | None = None) -> None:
    """``bin,count`` rows of a pooled degree histogram."""
    with open(path, "w", newline="") as fh:
        for k, v in sorted((meta or {}).items()):
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["bin", "count"])
        w.writerows((i, int(c)) for i, c in enumerate(counts))
