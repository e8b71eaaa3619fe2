"""Dense float64 helpers, stable reductions and a splittable seeded generator.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.  The
functions here validate shapes and finiteness at the boundary so the rest of
the package can assume well-formed inputs.
"""
from __future__ import annotations

import hashlib

import numpy as np


class SwavError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(SwavError, ValueError):
    pass


class DegenerateInputError(SwavError, ValueError):
    pass


class ConfigError(SwavError, ValueError):
    pass


class NumericRangeError(SwavError, ArithmeticError):
    pass


def as_mat(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericRangeError(f"{name} contains non-finite values")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericRangeError("matmul produced non-finite values")
    return out


def l2_normalize_rows(m, min_norm: float = 1e-12) -> np.ndarray:
    m = as_mat(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms < min_norm)
    if bad.size:
        raise DegenerateInputError(f"row {int(bad[0])} has norm {norms[bad[0]]:.3g} < {min_norm:g}")
    return m / norms[:, None]


def l2_normalize_cols(m, min_norm: float = 1e-12) -> np.ndarray:
    m = as_mat(m)
    norms = np.sqrt(np.einsum("ij,ij->j", m, m))
    bad = np.flatnonzero(norms < min_norm)
    if bad.size:
        raise DegenerateInputError(f"column {int(bad[0])} has norm {norms[bad[0]]:.3g} < {min_norm:g}")
    return m / norms[None, :]


def log_softmax_rows(m, tau: float = 1.0) -> np.ndarray:
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    x = np.asarray(m, dtype=np.float64) / tau
    x = x - x.max(axis=1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def softmax_rows(m, tau: float = 1.0) -> np.ndarray:
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    x = as_mat(m) / tau
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def logsumexp_rows(m) -> np.ndarray:
    x = np.asarray(m, dtype=np.float64)
    mx = x.max(axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return (mx + np.log(np.exp(x - mx).sum(axis=1, keepdims=True)))[:, 0]


def _stream_key(seed: int, path: str) -> int:
    digest = hashlib.blake2b(f"{int(seed)}|{path}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Counter-based (Philox) generator keyed by ``(seed, label path)``.

    ``split`` derives a child whose key depends only on the parent's path and
    the new label, so streams do not depend on how many draws the parent made.
    """

    def __init__(self, seed: int, stream_label: str = "root"):
        self.seed = int(seed)
        self.stream_label = stream_label
        self._gen = np.random.Generator(np.random.Philox(key=_stream_key(self.seed, stream_label)))

    def split(self, label) -> "Rng":
        return Rng(self.seed, f"{self.stream_label}/{label}")

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream_label={self.stream_label!r})"

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)
