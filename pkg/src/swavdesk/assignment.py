"""Balanced soft assignment of features to prototypes.

The main entry point is :func:`sinkhorn_codes`, which solves the entropic
equipartition problem on one batch of prototype scores with a few rounds of
Sinkhorn-Knopp scaling.  Spherical k-means lives here as well since the
offline DeepCluster-style baseline needs it for its assignment phase.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import (
    ConfigError,
    NumericRangeError,
    Rng,
    ShapeError,
    SwavError,
    as_mat,
    l2_normalize_rows,
)

# exp() overflows float64 just above 709; keep headroom for the global sum
_EXP_LIMIT = 500.0


@dataclass(frozen=True)
class SinkhornConfig:
    eps: float = 0.05
    niters: int = 3
    log_domain: bool = False

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"sinkhorn eps must be positive, got {self.eps}")
        if int(self.niters) < 1:
            raise ConfigError(f"sinkhorn niters must be >= 1, got {self.niters}")


@dataclass
class SinkhornState:
    """Scaling state in the K x B (prototypes x samples) orientation.

    ``q`` always satisfies ``q == diag(u) @ exp(scores.T / eps) @ diag(v)`` up
    to the global normalisation folded into ``u``.
    """

    q: np.ndarray
    row_target: np.ndarray
    col_target: np.ndarray
    u: np.ndarray
    v: np.ndarray


def _check_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
        raise ShapeError(f"scores must be a non-empty B x K matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NumericRangeError("scores contain non-finite values")
    return s


def sinkhorn_state(scores, cfg: SinkhornConfig = SinkhornConfig()) -> SinkhornState:
    """Run the scaling rounds and return the K x B transport plan with its scalings."""
    s = _check_scores(scores)
    if cfg.log_domain:
        return _sinkhorn_state_log(s, cfg)
    span = np.abs(s).max() / cfg.eps
    if span > _EXP_LIMIT:
        raise NumericRangeError(
            f"max |score|/eps = {span:.1f} overflows exp(); use SinkhornConfig(log_domain=True)"
        )
    q = np.exp(s / cfg.eps).T
    total = q.sum()
    q /= total
    k, b = q.shape
    r = np.ones(k) / k
    c = np.ones(b) / b
    u_acc = np.full(k, 1.0 / total)
    v_acc = np.ones(b)
    u = np.zeros(k)
    for _ in range(int(cfg.niters)):
        u = q.sum(axis=1)
        row_scale = r / u
        q *= row_scale[:, None]
        col_scale = c / q.sum(axis=0)
        q *= col_scale[None, :]
        u_acc *= row_scale
        v_acc *= col_scale
    return SinkhornState(q=q, row_target=r, col_target=c, u=u_acc, v=v_acc)


def _sinkhorn_state_log(s: np.ndarray, cfg: SinkhornConfig) -> SinkhornState:
    from scipy.special import logsumexp

    log_q = s.T / cfg.eps
    log_q = log_q - logsumexp(log_q)
    k, b = log_q.shape
    log_r = -np.log(k)
    log_c = -np.log(b)
    f = np.zeros(k)
    g = np.zeros(b)
    for _ in range(int(cfg.niters)):
        df = log_r - logsumexp(log_q, axis=1)
        log_q += df[:, None]
        f += df
        dg = log_c - logsumexp(log_q, axis=0)
        log_q += dg[None, :]
        g += dg
    return SinkhornState(
        q=np.exp(log_q),
        row_target=np.full(k, 1.0 / k),
        col_target=np.full(b, 1.0 / b),
        u=np.exp(f),
        v=np.exp(g),
    )


def sinkhorn_codes(scores, cfg: SinkhornConfig = SinkhornConfig()) -> np.ndarray:
    """Soft codes for a B x K score matrix; each returned row sums to one.

    Follows the reference procedure step for step: exponentiate the
    transposed scores, normalise globally, alternate row/column scaling
    ``niters`` times, then renormalise each sample's column to unit mass.
    """
    st = sinkhorn_state(scores, cfg)
    q = st.q
    return (q / q.sum(axis=0, keepdims=True)).T


def round_to_hard(codes) -> np.ndarray:
    q = np.asarray(codes, dtype=np.float64)
    out = np.zeros_like(q)
    out[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return out


def entropy(q) -> float:
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0):
        raise SwavError("entropy undefined for negative entries")
    nz = q[q > 0]
    return float(-(nz * np.log(nz)).sum())


def transport_objective(scores, q, eps: float) -> float:
    s = np.asarray(scores, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if s.shape != q.shape:
        raise ShapeError(f"scores {s.shape} and plan {q.shape} differ in shape")
    return float((q * s).sum() + eps * entropy(q))


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.iters < 1:
            raise ConfigError(f"k-means needs k >= 1 and iters >= 1, got k={self.k}, iters={self.iters}")


class KMeansResult(NamedTuple):
    centroids: np.ndarray
    assignments: np.ndarray
    objectives: list


def spherical_kmeans(features, cfg: KMeansConfig, rng: Rng | None = None) -> KMeansResult:
    """Lloyd iterations with dot-product assignment and normalised-mean updates.

    ``objectives[t]`` is ``sum_n z_n . c_{a(n)}`` after round ``t``; it never
    decreases.  Clusters left empty (or whose members sum to zero) are
    re-seeded from a random data row.
    """
    x = as_mat(features, "features")
    n = x.shape[0]
    if n < cfg.k:
        raise ConfigError(f"k-means needs at least k={cfg.k} rows, got {n}")
    rng = rng if rng is not None else Rng(cfg.seed, "kmeans")
    centroids = x[rng.choice(n, size=cfg.k, replace=False)].copy()
    assign = np.zeros(n, dtype=np.int64)
    objectives = []
    for _ in range(cfg.iters):
        assign = np.argmax(x @ centroids.T, axis=1)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        norms = np.linalg.norm(sums, axis=1)
        for j in range(cfg.k):
            if norms[j] > 1e-12:
                centroids[j] = sums[j] / norms[j]
            else:
                centroids[j] = x[rng.integers(n)]
        objectives.append(float(np.einsum("ij,ij->", x, centroids[assign])))
    return KMeansResult(l2_normalize_rows(centroids), assign, objectives)
