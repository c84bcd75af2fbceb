"""Edge-probability kernels on the nonnegative orthant and their gradients.

All functions broadcast over leading axes; the last axis holds the embedding
coordinates.  Outputs are clamped into ``[eps, 1 - eps]`` and gradients are
zero wherever the clamp is active.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from gmoe.errors import ConfigError, DegenerateEmbedding, DimensionMismatch

KINDS = (
    "dot-product",
    "complement-dot-product",
    "rbf",
    "scaled-rbf",
    "scaled-rbf-reciprocal",
    "polynomial",
)

# short names accepted in "<NAME><order>" strings such as "DP5" or "RBF4"
ABBREVIATIONS = {
    "DP": "dot-product",
    "CDP": "complement-dot-product",
    "RBF": "rbf",
    "SRBF": "scaled-rbf",
    "RSRBF": "scaled-rbf-reciprocal",
    "POLY": "polynomial",
}

_INNER = ("dot-product", "complement-dot-product")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "dot-product"
    degree: int = 1
    eps: float = 1e-6
    eps_z: float = 1e-6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kernel kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if not 0 < self.eps < 0.5:
            raise ConfigError("kernel eps must lie in (0, 0.5)")
        if self.kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise ConfigError("polynomial degree must be a positive integer")

    # -- evaluation -------------------------------------------------------

    def _check(self, z1, z2):
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        if z1.shape[-1] != z2.shape[-1]:
            raise DimensionMismatch(f"embedding dims differ: {z1.shape[-1]} vs {z2.shape[-1]}")
        if self.kind in _INNER:
            if min(np.min(np.linalg.norm(z1, axis=-1)), np.min(np.linalg.norm(z2, axis=-1))) < self.eps_z:
                raise DegenerateEmbedding(f"embedding norm below {self.eps_z}")
        return z1, z2

    def raw(self, z1, z2) -> np.ndarray:
        """Unclamped kernel value."""
        z1, z2 = self._check(z1, z2)
        kind = self.kind
        if kind in _INNER:
            cos = np.abs(np.sum(z1 * z2, axis=-1)) / (
                np.linalg.norm(z1, axis=-1) * np.linalg.norm(z2, axis=-1)
            )
            return cos if kind == "dot-product" else 1.0 - cos
        if kind == "polynomial":
            c = self.degree
            num = (1.0 + np.sum(z1 * z2, axis=-1)) ** c
            return num / np.sqrt((1.0 + np.sum(z1 * z1, axis=-1)) ** c * (1.0 + np.sum(z2 * z2, axis=-1)) ** c)
        rbf = np.exp(-np.sum((z1 - z2) ** 2, axis=-1))
        if kind == "rbf":
            return rbf
        scale = np.sqrt((1.0 + np.sum(z1 * z1, axis=-1)) * (1.0 + np.sum(z2 * z2, axis=-1)))
        return rbf * scale if kind == "scaled-rbf" else rbf / scale

    def __call__(self, z1, z2) -> np.ndarray:
        return np.clip(self.raw(z1, z2), self.eps, 1.0 - self.eps)

    evaluate = __call__

    def value_and_grad(self, z1, z2) -> tuple[np.ndarray, np.ndarray]:
        """Clamped value and gradient with respect to the first argument."""
        z1, z2 = self._check(z1, z2)
        raw = self.raw(z1, z2)
        kind = self.kind
        if kind in _INNER:
            dot = np.sum(z1 * z2, axis=-1)
            n1 = np.linalg.norm(z1, axis=-1)
            n2 = np.linalg.norm(z2, axis=-1)
            g = (np.sign(dot) / (n1 * n2))[..., None] * z2 - (np.abs(dot) / (n1**3 * n2))[..., None] * z1
            if kind == "complement-dot-product":
                g = -g
        elif kind == "polynomial":
            c = self.degree
            g = raw[..., None] * (
                c * z2 / (1.0 + np.sum(z1 * z2, axis=-1))[..., None]
                - c * z1 / (1.0 + np.sum(z1 * z1, axis=-1))[..., None]
            )
        else:
            g = -2.0 * (z1 - z2)
            if kind == "scaled-rbf":
                g = g + z1 / (1.0 + np.sum(z1 * z1, axis=-1))[..., None]
            elif kind == "scaled-rbf-reciprocal":
                g = g - z1 / (1.0 + np.sum(z1 * z1, axis=-1))[..., None]
            g = raw[..., None] * g
        clamped = (raw < self.eps) | (raw > 1.0 - self.eps)
        g = np.where(clamped[..., None], 0.0, g)
        return np.clip(raw, self.eps, 1.0 - self.eps), g

    def grad_z1(self, z1, z2) -> np.ndarray:
        return self.value_and_grad(z1, z2)[1]

    def name(self) -> str:
        short = {v: k for k, v in ABBREVIATIONS.items()}[self.kind]
        return short + (str(self.degree) if self.kind == "polynomial" else "")


def parse_kernel(text: str, degree: int = 1, eps: float = 1e-6, eps_z: float = 1e-6) -> tuple[KernelSpec, int | None]:
    """Parse ``"DP5"``-style names into a kernel and a training graphlet order.

    Full kind names (``"rbf"``) are accepted too and give order ``None``.
    """
    text = text.strip()
    if text.lower() in KINDS:
        return KernelSpec(text.lower(), degree, eps, eps_z), None
    m = re.fullmatch(r"([A-Za-z]+)(\d*)", text)
    if not m or m.group(1).upper() not in ABBREVIATIONS:
        raise ConfigError(f"cannot parse kernel {text!r}; expected e.g. DP5 or RBF4")
    kind = ABBREVIATIONS[m.group(1).upper()]
    order = int(m.group(2)) if m.group(2) else None
    return KernelSpec(kind, degree, eps, eps_z), order
