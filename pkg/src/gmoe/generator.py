"""Latent network mapping Gaussian noise to node retention and embeddings.

The network is a fully connected net with two Leaky-ReLU hidden layers.  Its
output layer is split into heads:

* ``kernel`` head: ``n`` logits squashed to retention probabilities ``q`` and
  ``n * d`` raw values mapped through softplus to embeddings ``z``;
* ``adjacency`` head: ``n (n - 1) / 2`` logits squashed to a symmetric edge
  probability matrix (fixed-size graphs, so ``q`` is pinned to one);
* ``community`` head: ``t * d`` embeddings, plus ``t`` free community logits
  stored after the network weights.

Parameters live in one flat vector so optimisers and finite-difference checks
can treat them uniformly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, softmax

from gmoe.errors import DataError, MissingCache, ShapeMismatch

LEAK = 0.01
HEADS = ("kernel", "adjacency", "community")
CHECKPOINT_VERSION = 1


def leaky_relu(x):
    return np.where(x >= 0, x, LEAK * x)


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class Architecture:
    n_nodes: int
    dim: int = 2
    input_dim: int = 10
    hidden: tuple[int, ...] = (10, 10)
    head: str = "kernel"
    train_q: bool = True
    communities: int = 0
    eps_z: float = 1e-6

    def __post_init__(self):
        if self.head not in HEADS:
            raise DataError(f"unknown head {self.head!r}")
        if self.head == "community" and self.communities < 1:
            raise DataError("community head needs communities >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def output_dim(self) -> int:
        if self.head == "kernel":
            return self.n_nodes + self.n_nodes * self.dim
        if self.head == "adjacency":
            return self.n_nodes * (self.n_nodes - 1) // 2
        return self.communities * self.dim

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def num_weights(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes)

    @property
    def num_params(self) -> int:
        return self.num_weights + (self.communities if self.head == "community" else 0)


@dataclass
class GeneratorParams:
    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.arch.num_params,):
            raise ShapeMismatch(
                f"expected {self.arch.num_params} parameters, got {self.theta.shape}"
            )

    def layers(self, theta=None) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into the flat vector; ``W`` has shape ``(fan_in, fan_out)``."""
        theta = self.theta if theta is None else theta
        out, off = [], 0
        for a, b in self.arch.layer_shapes:
            w = theta[off : off + a * b].reshape(a, b)
            off += a * b
            out.append((w, theta[off : off + b]))
            off += b
        return out

    @property
    def community_logits(self) -> np.ndarray:
        return self.theta[self.arch.num_weights :]

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.arch, self.theta.copy())

    # -- persistence ------------------------------------------------------

    def save(self, path, kernel=None, extra: dict | None = None) -> None:
        path = Path(path)
        meta = {
            "format": "gmoe-checkpoint",
            "version": CHECKPOINT_VERSION,
            "architecture": {**asdict(self.arch), "hidden": list(self.arch.hidden)},
            "kernel": asdict(kernel) if kernel is not None else None,
            "extra": extra or {},
        }
        if path.suffix == ".npz":
            np.savez(path, theta=self.theta, meta=json.dumps(meta))
        else:
            meta["theta"] = self.theta.tolist()
            path.write_text(json.dumps(meta))

    @classmethod
    def load(cls, path):
        """Returns ``(params, kernel_dict_or_None, extra)``."""
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as data:
                meta = json.loads(str(data["meta"]))
                theta = data["theta"]
        else:
            try:
                meta = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: {exc}") from None
            theta = meta.pop("theta", None) if isinstance(meta, dict) else None
        if not isinstance(meta, dict) or meta.get("format") != "gmoe-checkpoint" or theta is None:
            raise DataError(f"{path}: not a checkpoint")
        theta = np.asarray(theta, dtype=float)
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arch_d = dict(meta["architecture"])
        arch_d["hidden"] = tuple(arch_d["hidden"])
        return cls(Architecture(**arch_d), theta), meta.get("kernel"), meta.get("extra", {})


def init_params(arch: Architecture, rng: np.random.Generator) -> GeneratorParams:
    """Uniform fan-based initialisation, zero biases and zero community logits."""
    parts = []
    for a, b in arch.layer_shapes:
        lim = np.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-lim, lim, size=a * b))
        parts.append(np.zeros(b))
    if arch.head == "community":
        parts.append(np.zeros(arch.communities))
    return GeneratorParams(arch, np.concatenate(parts))


def mlp_forward(layers, x):
    """Leaky-ReLU hidden layers, linear output; returns ``(out, acts, pre)`` for backprop."""
    acts, pre = [x], []
    h = x
    for i, (w, b) in enumerate(layers):
        a = h @ w + b
        pre.append(a)
        h = leaky_relu(a) if i < len(layers) - 1 else a
        acts.append(h)
    return h, acts, pre


def mlp_backward(layers, acts, pre, g_out, grads) -> None:
    """Accumulate parameter gradients into the ``(gW, gb)`` views in ``grads``."""
    delta = g_out
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = grads[i]
        gw += acts[i].T @ delta
        gb += delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0].T) * np.where(pre[i - 1] >= 0, 1.0, LEAK)


def sample_noise(rng: np.random.Generator, input_dim: int, size: int | None = None) -> np.ndarray:
    shape = (input_dim,) if size is None else (size, input_dim)
    return rng.standard_normal(shape)


@dataclass
class LatentOutput:
    """Batched generator output; the leading axis indexes noise draws.

    ``q`` is ``(M, n)``, ``z`` is ``(M, n, d)`` (``(M, t, d)`` for communities),
    ``y`` is ``(M, n, n)`` for the adjacency head and ``s`` holds community
    probabilities.
    """

    q: np.ndarray | None = None
    z: np.ndarray | None = None
    y: np.ndarray | None = None
    s: np.ndarray | None = None
    cache: dict | None = field(default=None, repr=False)

    @property
    def batch(self) -> int:
        for a in (self.q, self.z, self.y):
            if a is not None:
                return a.shape[0]
        return 0

    def item(self, j: int) -> "LatentOutput":
        """Single draw ``j`` as a batch of one, without cache."""
        pick = lambda a: None if a is None else a[j : j + 1]
        return LatentOutput(pick(self.q), pick(self.z), pick(self.y), self.s)


def forward(params: GeneratorParams, omega) -> LatentOutput:
    """Evaluate the network on one noise vector or a batch ``(M, input_dim)``."""
    arch = params.arch
    omega = np.asarray(omega, dtype=float)
    if omega.ndim == 1:
        omega = omega[None]
    if omega.ndim != 2 or omega.shape[1] != arch.input_dim:
        raise ShapeMismatch(f"noise must have {arch.input_dim} columns, got {omega.shape}")
    out, acts, pre = mlp_forward(params.layers(), omega)
    m = omega.shape[0]
    n, d = arch.n_nodes, arch.dim
    res = LatentOutput(cache={"acts": acts, "pre": pre})
    if arch.head == "kernel":
        logits = out[:, :n]
        res.q = expit(logits) if arch.train_q else np.ones((m, n))
        res.z = _embed(out[:, n:].reshape(m, n, d), arch.eps_z)
    elif arch.head == "adjacency":
        rows, cols = np.triu_indices(n, 1)
        y = np.zeros((m, n, n))
        y[:, rows, cols] = expit(out)
        y[:, cols, rows] = y[:, rows, cols]
        res.q = np.ones((m, n))
        res.y = y
    else:
        res.z = _embed(out.reshape(m, arch.communities, d), arch.eps_z)
        res.s = softmax(params.community_logits)
    res.cache["out"] = out
    return res


def _embed(raw, eps_z):
    z = softplus(raw)
    small = np.linalg.norm(z, axis=-1) < eps_z
    if np.any(small):
        z[..., 0] = np.where(small, z[..., 0] + eps_z, z[..., 0])
    return z


def backward(params: GeneratorParams, latent: LatentOutput, dq=None, dz=None, dy=None, ds=None) -> np.ndarray:
    """Gradient of ``<dq, q> + <dz, z> + <dy, y> + <ds, s>`` with respect to ``theta``."""
    if latent.cache is None:
        raise MissingCache("forward cache missing; call forward() on this batch first")
    arch = params.arch
    acts, pre, out = latent.cache["acts"], latent.cache["pre"], latent.cache["out"]
    m = out.shape[0]
    n, d = arch.n_nodes, arch.dim
    g_out = np.zeros_like(out)
    if arch.head == "kernel":
        if dq is not None and arch.train_q:
            dq = _shaped(dq, (m, n))
            q = latent.q
            g_out[:, :n] = dq * q * (1.0 - q)
        if dz is not None:
            dz = _shaped(dz, (m, n, d))
            g_out[:, n:] = (dz * expit(out[:, n:].reshape(m, n, d))).reshape(m, n * d)
    elif arch.head == "adjacency":
        if dy is not None:
            dy = _shaped(dy, (m, n, n))
            rows, cols = np.triu_indices(n, 1)
            p = latent.y[:, rows, cols]
            g_out[:] = (dy[:, rows, cols] + dy[:, cols, rows]) * p * (1.0 - p)
    else:
        t = arch.communities
        if dz is not None:
            dz = _shaped(dz, (m, t, d))
            g_out[:] = (dz * expit(out.reshape(m, t, d))).reshape(m, t * d)

    grad = np.zeros_like(params.theta)
    mlp_backward(params.layers(), acts, pre, g_out, params.layers(grad))
    if arch.head == "community" and ds is not None:
        s = latent.s
        ds = np.asarray(ds, dtype=float)
        grad[arch.num_weights :] = s * (ds - np.dot(ds, s))
    return grad


def _shaped(a, shape):
    a = np.asarray(a, dtype=float)
    if a.shape != shape:
        raise ShapeMismatch(f"upstream gradient has shape {a.shape}, expected {shape}")
    return a


def weight_penalty(params: GeneratorParams | np.ndarray, lam: float, kappa: float) -> tuple[float, np.ndarray]:
    """``lam * (|theta| - kappa)^2`` once the norm exceeds ``kappa``, else zero."""
    theta = params.theta if isinstance(params, GeneratorParams) else np.asarray(params, dtype=float)
    norm = float(np.linalg.norm(theta))
    if norm < kappa or lam == 0:
        return 0.0, np.zeros_like(theta)
    return lam * (norm - kappa) ** 2, 2.0 * lam * (norm - kappa) * theta / norm
