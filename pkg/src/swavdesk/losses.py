"""Swapped code prediction, multi-crop contrastive, and pseudo-label losses.

Every loss returns its value together with analytic gradients with respect
to the unit-norm view features and (where relevant) the prototype matrix.
Codes and pseudo-labels are treated as constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PrototypeBank
from .numerics import ConfigError, ShapeError, SwavError, log_softmax_rows


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


@dataclass
class ViewBatch:
    views: list
    n_global: int = 2

    def __post_init__(self):
        self.views = [np.asarray(v, dtype=np.float64) for v in self.views]
        if not 1 <= self.n_global <= len(self.views):
            raise ConfigError(f"n_global={self.n_global} invalid for {len(self.views)} views")
        shape = self.views[0].shape
        for v in self.views[1:]:
            if v.shape != shape:
                raise ShapeError(f"view shapes differ: {shape} vs {v.shape}")

    @property
    def batch_size(self) -> int:
        return self.views[0].shape[0]


@dataclass
class LossOutput:
    loss: float
    d_views: list
    d_prototypes: np.ndarray | None = None
    terms: list = field(default_factory=list)


def _check_codes(q: np.ndarray, shape, tol: float = 1e-8):
    if q.shape != shape:
        raise ShapeError(f"codes have shape {q.shape}, expected {shape}")
    dev = np.abs(q.sum(axis=1) - 1.0).max()
    if dev > tol:
        raise SwavError(f"code rows must sum to 1 (max deviation {dev:.3g})")


def swapped_loss(views: ViewBatch, bank: PrototypeBank, codes, cfg: LossConfig = LossConfig()) -> LossOutput:
    """Average of ``l(z_v, q_i)`` over global views ``i`` and every other view ``v``."""
    if len(codes) != views.n_global:
        raise ShapeError(f"got {len(codes)} code matrices for {views.n_global} global views")
    c = bank.c
    b = views.batch_size
    if views.views[0].shape[1] != c.shape[0]:
        raise ShapeError(f"features have dim {views.views[0].shape[1]}, prototypes {c.shape[0]}")
    codes = [np.asarray(q, dtype=np.float64) for q in codes]
    for q in codes:
        _check_codes(q, (b, c.shape[1]))

    logp = [log_softmax_rows(z @ c, cfg.tau) for z in views.views]
    n_views = len(views.views)
    pairs = [(i, v) for i in range(views.n_global) for v in range(n_views) if v != i]
    if not pairs:
        raise ConfigError("swapped loss needs at least two views")
    d_scores = [np.zeros((b, c.shape[1])) for _ in range(n_views)]
    terms = []
    for i, v in pairs:
        terms.append(float(-(codes[i] * logp[v]).sum() / b))
        d_scores[v] += np.exp(logp[v]) - codes[i]
    # each (i, v) term contributes (p_v - q_i) / (tau * B); averaged over terms
    scale = 1.0 / (cfg.tau * b * len(pairs))
    d_views = []
    d_c = np.zeros_like(c)
    for z, ds in zip(views.views, d_scores):
        ds *= scale
        d_views.append(ds @ c.T)
        d_c += z.T @ ds
    return LossOutput(float(np.mean(terms)), d_views, d_c, terms)


def cluster_pred_loss(z, bank: PrototypeBank, q, cfg: LossConfig = LossConfig()) -> LossOutput:
    """Mean cross-entropy between fixed pseudo-labels ``q`` and softmax(z C / tau)."""
    z = np.asarray(z, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    c = bank.c
    if z.shape[1] != c.shape[0]:
        raise ShapeError(f"features have dim {z.shape[1]}, prototypes {c.shape[0]}")
    _check_codes(q, (z.shape[0], c.shape[1]))
    b = z.shape[0]
    logp = log_softmax_rows(z @ c, cfg.tau)
    loss = float(-(q * logp).sum() / b)
    ds = (np.exp(logp) - q) / (cfg.tau * b)
    return LossOutput(loss, [ds @ c.T], z.T @ ds, [loss])


def simclr_multicrop_loss(views: ViewBatch, cfg: LossConfig = LossConfig()) -> LossOutput:
    """Contrastive loss with M crops per instance; row ``n`` of every view is instance ``n``.

    Positives of a crop are the other crops of its instance, negatives are
    all crops of the other instances.
    """
    m = len(views.views)
    b = views.batch_size
    if m < 2:
        raise ConfigError(f"need at least 2 crops per instance for positive pairs, got {m}")
    z = np.concatenate(views.views, axis=0)
    n = z.shape[0]
    inst = np.tile(np.arange(b), m)
    s = (z @ z.T) / cfg.tau
    same = inst[:, None] == inst[None, :]
    pos = same & ~np.eye(n, dtype=bool)
    neg = ~same

    s_neg = np.where(neg, s, -np.inf)
    mx = s_neg.max(axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        neg_lse = (mx + np.log(np.exp(s_neg - mx).sum(axis=1, keepdims=True)))[:, 0]

    # log denominator of every (anchor, positive) pair
    log_den = np.logaddexp(s, neg_lse[:, None])
    per_pair = np.where(pos, log_den - s, 0.0)
    norm = 1.0 / (n * (m - 1))
    loss = float(per_pair.sum() * norm)

    w_pos = np.where(pos, np.exp(s - log_den), 0.0)
    # negatives: exp(s_in) * sum_p 1/den_ip, factored around neg_lse to stay in range
    ref = np.where(np.isfinite(neg_lse), neg_lse, 0.0)
    inv_den = np.where(pos, np.exp(ref[:, None] - log_den), 0.0).sum(axis=1)
    g = np.where(pos, w_pos - 1.0, 0.0)
    g += np.where(neg, np.exp(np.where(neg, s, 0.0) - ref[:, None]) * inv_den[:, None], 0.0)
    g *= norm / cfg.tau
    dz = (g + g.T) @ z
    return LossOutput(loss, list(np.split(dz, m, axis=0)), None, [loss])
