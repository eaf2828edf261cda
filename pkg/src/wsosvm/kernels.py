"""Kernel functions, Gram matrices and feature standardization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ValueError(f"gaussian kernel needs gamma > 0, got {self.gamma}")


def _check_lengths(x, z):
    if np.shape(x)[-1] != np.shape(z)[-1]:
        raise ValueError(f"feature length mismatch: {np.shape(x)[-1]} vs {np.shape(z)[-1]}")


def kernel_eval(spec: KernelSpec, x, z) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check_lengths(x, z)
    if spec.kind == "linear":
        # elementwise product sum is symmetric in its arguments bit for bit
        return float(np.sum(x * z))
    d = x - z
    return float(np.exp(-spec.gamma * np.sum(d * d)))


def cross_kernel(spec: KernelSpec, X, Z) -> np.ndarray:
    """Kernel matrix ``k(X[i], Z[j])`` for row-stacked samples."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    _check_lengths(X, Z)
    inner = X @ Z.T
    if spec.kind == "linear":
        return inner
    sq = (X * X).sum(axis=1)[:, None] + (Z * Z).sum(axis=1)[None, :] - 2.0 * inner
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-spec.gamma * sq)


def gram(spec: KernelSpec, samples) -> np.ndarray:
    """Symmetric Gram matrix; the upper triangle is computed and mirrored."""
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    K = cross_kernel(spec, X, X)
    iu = np.triu_indices(K.shape[0], 1)
    K[iu[1], iu[0]] = K[iu]
    if spec.kind == "gaussian":
        np.fill_diagonal(K, 1.0)
    return K


def pairwise_sq_distances(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    i, j = np.triu_indices(X.shape[0], 1)
    d = X[i] - X[j]
    return (d * d).sum(axis=1)


def median_gamma(samples) -> float:
    """Bandwidth 1 / median pairwise squared distance (1/dim if that is 0)."""
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if X.shape[0] < 2:
        raise ValueError("median_gamma needs at least 2 samples")
    med = float(np.median(pairwise_sq_distances(X)))
    if med <= 0:
        return 1.0 / X.shape[1]
    return 1.0 / med


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise ValueError(f"feature length mismatch: {X.shape[-1]} vs {self.mean.shape[0]}")
        return (X - self.mean) / self.std
