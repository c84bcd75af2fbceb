"""Moment matching on graphlet statistics by doubly stochastic gradient descent.

The objective is ``U = (E(H) - H_bar)^T D (E(H) - H_bar)``.  Each SGD step picks
one statistic ``F`` with probability proportional to ``D_F``, two independent
adjacency patterns ``A, A~`` of that class, ``M`` noise pairs and ``L`` vertex
subset pairs, and descends the gradient of

    sum_{i,j} (eta(w~_j, W~_i, A~) - H_bar_F) (eta(w_j, W_i, A) - H_bar_F)

where ``eta`` is the conditional probability (times the class size) that the
subset is retained and induces the pattern.

Everything below works on batches of edge probabilities ``P`` laid out along
the row-major pairs of the subset, so the same algebra serves the kernel
model, the adjacency-matrix model and the community model.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from math import comb

import numpy as np

from gmoe.census import MomentVector, PartialGraphlet, StatisticSet, sample_subsets
from gmoe.errors import (
    BudgetExceeded,
    ConfigError,
    DataError,
    NonFiniteGradient,
    TooLargeForExact,
    UnsupportedOrder,
)
from gmoe.generator import (
    GeneratorParams,
    LatentOutput,
    backward,
    forward,
    sample_noise,
    weight_penalty,
)
from gmoe.graphs import ClassRegistry, EdgeCode, code_bits, num_pairs, pair_index
from gmoe.kernels import KernelSpec
from gmoe.sampler import CommunityModel

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# products on batches of edge probabilities


def _loo_prod(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Product over the last axis and the leave-one-out products, without division."""
    ones = np.ones(x.shape[:-1] + (1,))
    left = np.cumprod(np.concatenate([ones, x[..., :-1]], axis=-1), axis=-1)
    right = np.cumprod(np.concatenate([ones, x[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
    loo = left * right
    return loo[..., 0] * x[..., 0], loo


def pattern_terms(q: np.ndarray, P: np.ndarray, bits: np.ndarray, size: float = 1.0):
    """``size * prod q * prod P^A (1-P)^(1-A)`` with gradients in ``q`` and ``P``.

    ``q`` is ``(..., p)``, ``P`` and ``bits`` are ``(..., m)``.
    """
    bits = np.broadcast_to(bits, P.shape).astype(bool)
    f = np.where(bits, P, 1.0 - P)
    qprod, q_loo = _loo_prod(q)
    fprod, f_loo = _loo_prod(f)
    value = size * qprod * fprod
    d_q = size * q_loo * fprod[..., None]
    d_P = size * qprod[..., None] * f_loo * np.where(bits, 1.0, -1.0)
    return value, d_q, d_P


def star_terms(q: np.ndarray, P: np.ndarray):
    """Expected hub count ``prod q * sum_h prod_{j != h} P_hj`` with gradients."""
    p = q.shape[-1]
    rows, cols = pair_index(p)
    mat = np.ones(P.shape[:-1] + (p, p))
    mat[..., rows, cols] = P
    mat[..., cols, rows] = P
    hub, loo = _loo_prod(mat)
    total = hub.sum(axis=-1)
    qprod, q_loo = _loo_prod(q)
    value = qprod * total
    d_q = q_loo * total[..., None]
    d_P = qprod[..., None] * (loo[..., rows, cols] + loo[..., cols, rows])
    return value, d_q, d_P


def code_distribution(P: np.ndarray) -> np.ndarray:
    """Probabilities of every edge code given independent pair probabilities ``(..., m)``."""
    out = np.ones(P.shape[:-1] + (1,))
    for k in range(P.shape[-1]):
        pk = P[..., k : k + 1]
        out = np.concatenate([out * (1.0 - pk), out * pk], axis=-1)
    return out


# ---------------------------------------------------------------------------
# problem description


@dataclass
class TrainConfig:
    order: int = 3
    star_orders: tuple[int, ...] = ()
    weights: str = "identity"
    delta: float = 1e-4
    L: int = 32
    M: int = 8
    draws_per_step: int = 1
    gammas: tuple[float, ...] = (1e-2, 3e-3, 1e-3)
    thresholds: tuple[float, ...] = (0.2, 0.08, 0.04)
    threshold_mode: str = "relative"
    max_iters: int = 20_000
    eval_every: int = 50
    eval_noise: int = 32
    eval_subsets: int = 64
    penalty_lambda: float = 0.0
    penalty_kappa: float = 10.0
    max_assignments: int = 200_000
    # restore the best parameters and step down when U exceeds this multiple
    # of the best value seen so far (0 disables the guard)
    revert_factor: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.gammas = tuple(float(g) for g in self.gammas)
        self.thresholds = tuple(float(u) for u in self.thresholds)
        self.star_orders = tuple(int(s) for s in self.star_orders)
        if len(self.gammas) != len(self.thresholds) or not self.gammas:
            raise ConfigError("gammas and thresholds need the same, nonzero length")
        if any(a <= b for a, b in zip(self.gammas, self.gammas[1:])):
            raise ConfigError("step sizes must be strictly decreasing")
        if any(a <= b for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ConfigError("thresholds must be strictly decreasing")
        if self.L < 1 or self.M < 1 or self.draws_per_step < 1:
            raise ConfigError("L, M and draws_per_step must be at least 1")
        if self.weights not in ("identity", "inverse"):
            raise ConfigError("weights must be 'identity' or 'inverse'")
        if self.threshold_mode not in ("relative", "absolute"):
            raise ConfigError("threshold_mode must be 'relative' or 'absolute'")
        if any(g < 0 for g in self.gammas):
            raise ConfigError("step sizes must be nonnegative")
        if self.revert_factor < 0 or 0 < self.revert_factor <= 1:
            raise ConfigError("revert_factor must be 0 (off) or greater than 1")

    @property
    def phases(self) -> int:
        return len(self.gammas)


def make_weights(targets: MomentVector, mode: str = "identity", delta: float = 1e-4) -> np.ndarray:
    """Diagonal of ``D``: all ones, or ``1 / max(H_bar_F, delta)``."""
    if mode == "identity":
        return np.ones(len(targets.values))
    if mode == "inverse":
        return 1.0 / np.maximum(np.abs(targets.values), delta)
    raise ConfigError(f"unknown weight mode {mode!r}")


class Problem:
    """Targets, weights and the per-class tables needed by the estimators."""

    def __init__(self, reg: ClassRegistry, kernel: KernelSpec, targets: MomentVector, n: int, weights=None):
        stats = targets.stats
        self.reg = reg
        self.kernel = kernel
        self.targets = targets
        self.stats = stats
        self.n = int(n)
        self.p = stats.order
        if not reg.is_dense(self.p):
            raise UnsupportedOrder(f"training needs a dense class table for order {self.p}")
        if self.p > self.n:
            raise DataError(f"order {self.p} exceeds n={self.n}")
        for m in stats.partials:
            if not m.is_star:
                raise ConfigError("only star partial graphlets are supported for training")
            if m.order > self.n:
                raise DataError(f"partial graphlet order {m.order} exceeds n={self.n}")
        self.table = reg.table(self.p)
        self.bits = code_bits(self.p, np.arange(1 << num_pairs(self.p)))
        self.D = np.ones(len(stats)) if weights is None else np.asarray(weights, dtype=float)
        if self.D.shape != (len(stats),) or np.any(self.D <= 0):
            raise ConfigError("weights must be positive, one per statistic")
        self.H = targets.values

    def kind(self, F: int) -> tuple[str, object]:
        """``("node", None)``, ``("class", class_id)`` or ``("star", order)``."""
        st = self.stats
        if st.include_node and F == 0:
            return "node", None
        cs = st.class_slice
        if cs.start <= F < cs.stop:
            return "class", F - cs.start
        return "star", st.partials[F - st.partial_slice.start].order

    def stat_order(self, F: int) -> int:
        kind, arg = self.kind(F)
        return 1 if kind == "node" else (self.p if kind == "class" else arg)


# ---------------------------------------------------------------------------
# conditional expectations for the kernel / adjacency model


@dataclass
class EtaBatch:
    """Values ``(M, L)`` and local gradients for subsets ``W`` of shape ``(M, L, p)``."""

    value: np.ndarray
    W: np.ndarray
    d_q: np.ndarray
    d_z: np.ndarray | None = None
    d_P: np.ndarray | None = None


def _pair_probs(latent: LatentOutput, kernel: KernelSpec, W: np.ndarray, need_grad=True):
    """Edge probabilities over the subset pairs and their gradients in the endpoints."""
    p = W.shape[-1]
    rows, cols = pair_index(p)
    j = np.arange(W.shape[0])[:, None, None]
    if latent.y is not None:
        return latent.y[j, W[..., rows], W[..., cols]], None, None
    zW = latent.z[np.arange(W.shape[0])[:, None, None], W]
    za, zb = zW[..., rows, :], zW[..., cols, :]
    if not need_grad:
        return kernel(za, zb), None, None
    P, ga = kernel.value_and_grad(za, zb)
    gb = kernel.grad_z1(zb, za)
    return P, ga, gb


def eta_batch(problem: Problem, latent: LatentOutput, F: int, W: np.ndarray, codes=None, need_grad=True) -> EtaBatch:
    """Conditional expectations for statistic ``F`` on a grid of (noise, subset) pairs.

    ``codes`` holds one adjacency pattern per entry (broadcast against ``(M, L)``)
    and is only used for class statistics.
    """
    kind, arg = problem.kind(F)
    j = np.arange(W.shape[0])[:, None, None]
    q = latent.q[j, W]
    if kind == "node":
        return EtaBatch(q[..., 0], W, np.ones_like(q))
    P, ga, gb = _pair_probs(latent, problem.kernel, W, need_grad)
    if kind == "class":
        size = problem.table.sizes[arg]
        bits = problem.bits[np.asarray(codes)]
        value, d_q, d_P = pattern_terms(q, P, bits, float(size))
    else:
        value, d_q, d_P = star_terms(q, P)
    out = EtaBatch(value, W, d_q, d_P=d_P)
    if need_grad and ga is not None:
        out.d_z = _node_grads(W.shape[-1], d_P, ga, gb)
    return out


def scatter(latent: LatentOutput, batch: EtaBatch, weight: np.ndarray):
    """Weighted sum of local gradients, scattered onto the latent arrays."""
    M, n = latent.q.shape
    W = batch.W
    j = np.broadcast_to(np.arange(M)[:, None, None], W.shape)
    w = weight[..., None]
    dq = np.zeros((M, n))
    np.add.at(dq, (j, W), w * batch.d_q)
    dz = dy = None
    if batch.d_z is not None:
        dz = np.zeros(latent.z.shape)
        np.add.at(dz, (j, W), w[..., None] * batch.d_z)
    elif latent.y is not None and batch.d_P is not None:
        rows, cols = pair_index(W.shape[-1])
        dy = np.zeros(latent.y.shape)
        jj = np.broadcast_to(np.arange(M)[:, None, None], W.shape[:-1] + (len(rows),))
        np.add.at(dy, (jj, W[..., rows], W[..., cols]), w * batch.d_P)
    return dq, dz, dy


def _single(latent: LatentOutput, W) -> tuple[LatentOutput, np.ndarray]:
    W = np.asarray(W, dtype=np.intp)
    one = latent.item(0) if latent.batch > 1 else latent
    return one, W[None, None, :]


@dataclass
class EtaSample:
    value: float
    d_q: np.ndarray
    d_z: np.ndarray | None = None


def eta(latent: LatentOutput, k: KernelSpec, W, A: EdgeCode, class_size: int) -> EtaSample:
    """``|A_F| * P(W retained and inducing A | latent)`` and its gradients at the nodes of ``W``."""
    one, Wb = _single(latent, W)
    if A.order != Wb.shape[-1]:
        raise DataError("pattern order does not match the subset size")
    P, ga, gb = _pair_probs(one, k, Wb)
    q = one.q[0][Wb]
    value, d_q, d_P = pattern_terms(q, P, code_bits(A.order, [A.bits])[0], float(class_size))
    d_z = _node_grads(Wb.shape[-1], d_P, ga, gb) if ga is not None else None
    return EtaSample(float(value[0, 0]), d_q[0, 0], None if d_z is None else d_z[0, 0])


def eta_node(latent: LatentOutput, i: int) -> EtaSample:
    q = latent.q[0]
    return EtaSample(float(q[i]), np.ones(1))


def eta_partial_star(latent: LatentOutput, k: KernelSpec, W) -> EtaSample:
    one, Wb = _single(latent, W)
    P, ga, gb = _pair_probs(one, k, Wb)
    q = one.q[0][Wb]
    value, d_q, d_P = star_terms(q, P)
    d_z = _node_grads(Wb.shape[-1], d_P, ga, gb) if ga is not None else None
    return EtaSample(float(value[0, 0]), d_q[0, 0], None if d_z is None else d_z[0, 0])


def _node_grads(p, d_P, ga, gb):
    rows, cols = pair_index(p)
    d_z = np.zeros(d_P.shape[:-1] + (p, ga.shape[-1]))
    for k, (a, b) in enumerate(zip(rows, cols)):
        d_z[..., a, :] += d_P[..., k, None] * ga[..., k, :]
        d_z[..., b, :] += d_P[..., k, None] * gb[..., k, :]
    return d_z


# ---------------------------------------------------------------------------
# community model


@dataclass
class CommunityEta:
    value: np.ndarray
    d_z: np.ndarray
    d_s: np.ndarray


def _assignments(t: int, p: int, cap: int) -> np.ndarray:
    if t**p > cap:
        raise BudgetExceeded(f"{t}^{p} community assignments exceed the cap of {cap}")
    return np.array(list(itertools.product(range(t), repeat=p)), dtype=np.intp).reshape(-1, p)


def community_eta_batch(
    z: np.ndarray, s: np.ndarray, k: KernelSpec, p: int, kind: str, bits=None, size: float = 1.0, cap: int = 200_000
) -> CommunityEta:
    """Sum over all community assignments of ``p`` nodes.

    ``z`` is ``(M, t, d)``; ``kind`` is ``"class"`` (with the pattern ``bits``)
    or ``"star"``.  Returns values ``(M,)``, gradients ``(M, t, d)`` in the
    embeddings and ``(M, t)`` in the community probabilities.
    """
    M, t, _ = z.shape
    C = _assignments(t, p, cap)
    rows, cols = pair_index(p)
    phi, g = k.value_and_grad(z[:, :, None, :], z[:, None, :, :])
    P = phi[:, C[:, rows], C[:, cols]]
    ones = np.ones((M, len(C), p))
    if kind == "class":
        vals, _, d_P = pattern_terms(ones, P, bits)
    else:
        vals, _, d_P = star_terms(ones, P)
    counts = np.stack([(C == u).sum(axis=1) for u in range(t)], axis=1)
    w = np.prod(s[C], axis=1)
    value = size * vals @ w
    G = np.zeros((M, t, t))
    for kk, (a, b) in enumerate(zip(rows, cols)):
        np.add.at(G, (slice(None), C[:, a], C[:, b]), size * w * d_P[:, :, kk])
    Gs = G + G.transpose(0, 2, 1)
    d_z = np.einsum("muv,muvd->mud", Gs, g)
    # d/ds_u of prod_i s_{c_i} is count_u(c) * w_c / s_u
    d_s = size * (vals * w) @ counts / np.maximum(s, 1e-300)
    return CommunityEta(value, d_z, d_s)


def eta_community(cm: CommunityModel, k: KernelSpec, p: int, A: EdgeCode | None, class_size: int = 1, kind: str = "class", cap: int = 200_000) -> CommunityEta:
    """Single-model convenience wrapper; ``A=None`` with ``kind="star"`` gives the star statistic."""
    z = np.asarray(cm.z, dtype=float)[None]
    bits = None if A is None else code_bits(p, [A.bits])[0]
    res = community_eta_batch(z, np.asarray(cm.s, dtype=float), k, p, kind, bits, float(class_size), cap)
    return CommunityEta(float(res.value[0]), res.d_z[0], res.d_s[0])


def _community_stat(problem: Problem, latent: LatentOutput, F: int, cap: int) -> CommunityEta:
    kind, arg = problem.kind(F)
    M = latent.z.shape[0]
    t = latent.z.shape[1]
    if kind == "node":
        return CommunityEta(np.ones(M), np.zeros_like(latent.z), np.zeros((M, t)))
    if kind == "class":
        rep = problem.table.canonical[arg]
        return community_eta_batch(
            latent.z, latent.s, problem.kernel, problem.p, "class",
            problem.bits[rep], float(problem.table.sizes[arg]), cap,
        )
    return community_eta_batch(latent.z, latent.s, problem.kernel, arg, "star", cap=cap)


# ---------------------------------------------------------------------------
# objective


def _uniform_subsets(rng, n, p, shape) -> np.ndarray:
    size = int(np.prod(shape))
    return sample_subsets(rng, n, p, size).reshape(tuple(shape) + (p,))


def expected_moments(params: GeneratorParams, problem: Problem, noise: np.ndarray, subsets=None, rng=None, n_subsets: int = 64) -> np.ndarray:
    """``E(H)`` averaged over the given noise draws, analytically in the edges.

    With ``subsets=None`` every ``p``-subset of ``range(n)`` is enumerated when
    there are at most 5000 of them, otherwise ``n_subsets`` are sampled per noise.
    """
    latent = forward(params, noise)
    stats = problem.stats
    out = np.zeros(len(stats))
    if params.arch.head == "community":
        return _community_moments(problem, latent)
    M = latent.q.shape[0]
    p = problem.p
    if stats.include_node:
        out[0] = latent.q.mean()
    if subsets is None and comb(problem.n, p) <= 5000:
        subsets = np.array(list(itertools.combinations(range(problem.n), p)))
    if subsets is None:
        W = _uniform_subsets(rng, problem.n, p, (M, n_subsets))
    else:
        W = np.broadcast_to(np.asarray(subsets)[None], (M,) + np.asarray(subsets).shape)
    onehot = np.zeros((1 << num_pairs(p), problem.table.num_classes))
    onehot[np.arange(len(onehot)), problem.table.class_of] = 1.0
    per = max(1, (1 << 22) // len(onehot))
    acc = np.zeros(problem.table.num_classes)
    count = 0
    flatW = W.reshape(-1, p)
    flatj = np.repeat(np.arange(M), W.shape[1])
    for start in range(0, len(flatW), per):
        Wc = flatW[start : start + per]
        jc = flatj[start : start + per]
        sub = LatentOutput(q=latent.q[jc], z=None if latent.z is None else latent.z[jc], y=None if latent.y is None else latent.y[jc])
        P, _, _ = _pair_probs(sub, problem.kernel, Wc[:, None, :], need_grad=False)
        probs = code_distribution(P[:, 0]) * np.prod(sub.q[np.arange(len(Wc))[:, None], Wc], axis=-1)[:, None]
        acc += (probs @ onehot).sum(axis=0)
        count += len(Wc)
    out[stats.class_slice] = acc / count
    for i, m in enumerate(stats.partials):
        if m.order == p:
            Ws = W
        elif subsets is None or comb(problem.n, m.order) > 5000:
            Ws = _uniform_subsets(rng if rng is not None else np.random.default_rng(0), problem.n, m.order, (M, n_subsets))
        else:
            Ws = np.broadcast_to(
                np.array(list(itertools.combinations(range(problem.n), m.order)))[None], (M, comb(problem.n, m.order), m.order)
            )
        j = np.arange(M)[:, None, None]
        P, _, _ = _pair_probs(latent, problem.kernel, Ws, need_grad=False)
        val, _, _ = star_terms(latent.q[j, Ws], P)
        out[stats.partial_slice.start + i] = val.mean()
    return out


def _community_moments(problem: Problem, latent: LatentOutput) -> np.ndarray:
    stats = problem.stats
    out = np.zeros(len(stats))
    if stats.include_node:
        out[0] = 1.0
    z, s, k = latent.z, latent.s, problem.kernel
    p = problem.p
    M, t, _ = z.shape
    C = _assignments(t, p, 1 << 22)
    rows, cols = pair_index(p)
    phi = k(z[:, :, None, :], z[:, None, :, :])
    w = np.prod(s[C], axis=1)
    probs = np.zeros(1 << num_pairs(p))
    for start in range(0, len(C), 256):
        Cc = C[start : start + 256]
        P = phi[:, Cc[:, rows], Cc[:, cols]]
        probs += np.einsum("mcx,c->x", code_distribution(P), w[start : start + 256]) / M
    out[stats.class_slice] = np.bincount(problem.table.class_of, weights=probs, minlength=problem.table.num_classes)
    for i, m in enumerate(stats.partials):
        res = community_eta_batch(z, s, k, m.order, "star", cap=1 << 22)
        out[stats.partial_slice.start + i] = res.value.mean()
    return out


def weighted_objective(problem: Problem, moments: np.ndarray) -> float:
    diff = moments - problem.H
    return float(np.sum(problem.D * diff * diff))


def objective_exact(params: GeneratorParams, problem: Problem, noise: np.ndarray) -> float:
    """``U`` with ``E(H)`` exact over all subsets and edges, averaged over ``noise``.

    Treats ``noise`` as the whole noise distribution, so it is exact for the
    empirical distribution of those draws.  Limited to ``n <= 8``.
    """
    if problem.n > 8 and params.arch.head != "community":
        raise TooLargeForExact(f"exact objective limited to n <= 8, got n={problem.n}")
    subsets = np.array(list(itertools.combinations(range(problem.n), problem.p)))
    return weighted_objective(problem, expected_moments(params, problem, noise, subsets=subsets))


def estimate_objective(params: GeneratorParams, problem: Problem, rng, n_noise: int = 32, n_subsets: int = 64) -> float:
    noise = sample_noise(rng, params.arch.input_dim, n_noise)
    return weighted_objective(problem, expected_moments(params, problem, noise, rng=rng, n_subsets=n_subsets))


# ---------------------------------------------------------------------------
# stochastic estimator and its gradient


def _draw_pattern(problem: Problem, F: int, rng, size=None):
    kind, arg = problem.kind(F)
    if kind != "class":
        return None
    members = problem.table.members(arg)
    return members[rng.integers(len(members), size=size)]


def stochastic_objective(params: GeneratorParams, problem: Problem, rng, draws: int, noise_pool: np.ndarray | None = None) -> np.ndarray:
    """Independent single-term samples of ``tr(D) (eta~ - H_bar)(eta - H_bar)``.

    With a ``noise_pool`` the noise is drawn uniformly from its rows, which
    makes the mean match :func:`objective_exact` on the same pool.
    """
    if params.arch.head == "community":
        raise ConfigError("the community model has no subset sampling; use community_sgd terms")
    probs = problem.D / problem.D.sum()
    Fs = rng.choice(len(probs), size=draws, p=probs)
    out = np.empty(draws)
    if noise_pool is not None:
        pool_latent = forward(params, noise_pool)
    for F in np.unique(Fs):
        idx = np.flatnonzero(Fs == F)
        m = len(idx)
        order = problem.stat_order(F)
        pair = []
        for _ in range(2):
            if noise_pool is not None:
                pick = rng.integers(len(noise_pool), size=m)
                lat = LatentOutput(
                    q=pool_latent.q[pick],
                    z=None if pool_latent.z is None else pool_latent.z[pick],
                    y=None if pool_latent.y is None else pool_latent.y[pick],
                )
            else:
                lat = forward(params, sample_noise(rng, params.arch.input_dim, m))
            W = _uniform_subsets(rng, problem.n, order, (m, 1))
            codes = _draw_pattern(problem, F, rng, size=(m, 1))
            pair.append(eta_batch(problem, lat, F, W, codes, need_grad=False).value[:, 0])
        H = problem.H[F]
        out[idx] = problem.D.sum() * (pair[0] - H) * (pair[1] - H)
    return out


@dataclass
class Minibatch:
    """Frozen random choices of one SGD step, so gradients can be checked exactly."""

    F: int
    omega: np.ndarray
    omega_t: np.ndarray
    W: np.ndarray | None
    W_t: np.ndarray | None
    A: int | None
    A_t: int | None


def draw_minibatch(params: GeneratorParams, problem: Problem, cfg: TrainConfig, rng) -> Minibatch:
    probs = problem.D / problem.D.sum()
    F = int(rng.choice(len(probs), p=probs))
    M, L = cfg.M, cfg.L
    omega = sample_noise(rng, params.arch.input_dim, M)
    omega_t = sample_noise(rng, params.arch.input_dim, M)
    if params.arch.head == "community":
        return Minibatch(F, omega, omega_t, None, None, None, None)
    order = problem.stat_order(F)
    W = sample_subsets(rng, problem.n, order, L)
    W_t = sample_subsets(rng, problem.n, order, L)
    A = _draw_pattern(problem, F, rng)
    A_t = _draw_pattern(problem, F, rng)
    return Minibatch(F, omega, omega_t, W, W_t, A, A_t)


def minibatch_objective_and_grad(params: GeneratorParams, problem: Problem, mb: Minibatch, cap: int = 200_000, need_grad: bool = True):
    """``sum_{i,j} (eta~ - H)(eta - H)`` on a frozen minibatch and its gradient in ``theta``."""
    H = problem.H[mb.F]
    arch = params.arch
    M = len(mb.omega)
    latent = forward(params, np.concatenate([mb.omega, mb.omega_t]))
    if arch.head == "community":
        res = _community_stat(problem, latent, mb.F, cap)
        a, b = res.value[:M] - H, res.value[M:] - H
        value = float(np.sum(a * b))
        if not need_grad:
            return value, None
        wgt = np.concatenate([b, a])
        dz = wgt[:, None, None] * res.d_z
        ds = (wgt[:, None] * res.d_s).sum(axis=0)
        return value, backward(params, latent, dz=dz, ds=ds)
    L = len(mb.W)
    W = np.concatenate([np.broadcast_to(mb.W, (M, L, mb.W.shape[1])), np.broadcast_to(mb.W_t, (M, L, mb.W.shape[1]))])
    codes = None
    if mb.A is not None:
        codes = np.concatenate([np.full((M, L), mb.A), np.full((M, L), mb.A_t)])
    batch = eta_batch(problem, latent, mb.F, W, codes, need_grad=need_grad)
    e, e_t = batch.value[:M] - H, batch.value[M:] - H
    value = float(np.sum(e * e_t))
    if not need_grad:
        return value, None
    weight = np.concatenate([e_t, e])
    dq, dz, dy = scatter(latent, batch, weight)
    return value, backward(params, latent, dq=dq, dz=dz, dy=dy)


def sgd_step(params: GeneratorParams, problem: Problem, cfg: TrainConfig, rng, gamma: float):
    """One update; returns the new parameters and the stochastic objective estimate."""
    grad = np.zeros_like(params.theta)
    values = []
    for _ in range(cfg.draws_per_step):
        mb = draw_minibatch(params, problem, cfg, rng)
        value, g = minibatch_objective_and_grad(params, problem, mb, cfg.max_assignments)
        grad += g
        terms = cfg.M if params.arch.head == "community" else cfg.M * cfg.L
        values.append(problem.D.sum() * value / terms)
    if cfg.penalty_lambda > 0:
        _, gp = weight_penalty(params, cfg.penalty_lambda, cfg.penalty_kappa)
        grad += gp
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(
            f"non-finite gradient (|theta|={np.linalg.norm(params.theta):.3g}, "
            f"nan={np.isnan(grad).sum()}, inf={np.isinf(grad).sum()})"
        )
    if gamma == 0:
        return params, float(np.mean(values))
    return GeneratorParams(params.arch, params.theta - gamma * grad), float(np.mean(values))


# ---------------------------------------------------------------------------
# schedule


@dataclass
class TraceRow:
    iteration: int
    estimated_U: float
    phase: int
    wall_seconds: float


@dataclass
class TrainResult:
    params: GeneratorParams
    trace: list[TraceRow]
    converged: bool
    iterations: int
    best_U: float
    thresholds: tuple[float, ...] = field(default=())


def train(params: GeneratorParams, problem: Problem, cfg: TrainConfig, rng, progress=None, on_phase=None) -> TrainResult:
    """Step-down SGD: run phase ``k`` at ``gammas[k]`` until the evaluated ``U`` drops below ``u_k``.

    Stops after the last phase or at ``max_iters``; in the latter case the best
    evaluated parameters are returned with ``converged=False``.  With
    ``revert_factor`` set, a jump of the estimate far above its best value
    restores the best parameters and moves on to the next, smaller step size.
    """
    t0 = time.perf_counter()
    eval_rng = np.random.default_rng(rng.integers(2**63))
    U = estimate_objective(params, problem, eval_rng, cfg.eval_noise, cfg.eval_subsets)
    if cfg.threshold_mode == "relative":
        thresholds = tuple(u * U for u in cfg.thresholds)
    else:
        thresholds = cfg.thresholds
    phase = 0
    trace = [TraceRow(0, U, 0, time.perf_counter() - t0)]
    if progress is not None:
        progress(trace[0])
    best, best_U = params, U

    def advance(U, it):
        nonlocal phase
        while phase < cfg.phases and U < thresholds[phase]:
            phase += 1
            if on_phase is not None:
                on_phase(phase, params, it)

    advance(U, 0)
    it = 0
    while phase < cfg.phases and it < cfg.max_iters:
        params, _ = sgd_step(params, problem, cfg, rng, cfg.gammas[phase])
        it += 1
        if it % cfg.eval_every == 0 or it == cfg.max_iters:
            U = estimate_objective(params, problem, eval_rng, cfg.eval_noise, cfg.eval_subsets)
            row = TraceRow(it, U, phase, time.perf_counter() - t0)
            trace.append(row)
            if progress is not None:
                progress(row)
            if U < best_U:
                best, best_U = params, U
            elif cfg.revert_factor and U > cfg.revert_factor * best_U:
                log.info("U=%.3g at iteration %d exceeds %g x best; restoring best parameters", U, it, cfg.revert_factor)
                params = best
                if phase < cfg.phases - 1:
                    phase += 1
                    if on_phase is not None:
                        on_phase(phase, params, it)
            advance(U, it)
    converged = phase >= cfg.phases
    if not converged:
        log.warning("max_iters=%d reached in phase %d; returning best parameters", cfg.max_iters, phase)
        params = best
    return TrainResult(params, trace, converged, it, best_U, thresholds)
