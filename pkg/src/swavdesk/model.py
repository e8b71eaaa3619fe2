"""MLP encoder with a projection head, hand-written backward pass, and prototypes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    ConfigError,
    DegenerateInputError,
    Rng,
    ShapeError,
    as_mat,
    l2_normalize_cols,
)


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dims: tuple = (128,)
    repr_dim: int = 64
    proj_hidden_dim: int = 64
    embed_dim: int = 128
    activation: str = "relu"

    def __post_init__(self):
        dims = [self.input_dim, *self.hidden_dims, self.repr_dim, self.embed_dim]
        if any(int(d) < 1 for d in dims) or self.proj_hidden_dim < 0:
            raise ConfigError(f"encoder dimensions must be >= 1, got {dims}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")


@dataclass
class EncoderParams:
    """Linear layers ``(W, b)`` with ``W`` of shape (fan_in, fan_out).

    The first ``n_backbone`` layers form the backbone and are each followed by
    a ReLU; the rest form the projection head, with ReLU between (not after)
    its layers.
    """

    layers: list
    n_backbone: int

    def named_arrays(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"encoder.{i}.weight"] = w
            out[f"encoder.{i}.bias"] = b
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams([(w.copy(), b.copy()) for w, b in self.layers], self.n_backbone)


def init_encoder(cfg: EncoderConfig, rng: Rng) -> EncoderParams:
    backbone = [cfg.input_dim, *cfg.hidden_dims, cfg.repr_dim]
    head = [cfg.repr_dim] + ([cfg.proj_hidden_dim] if cfg.proj_hidden_dim else []) + [cfg.embed_dim]
    shapes = list(zip(backbone[:-1], backbone[1:])) + list(zip(head[:-1], head[1:]))
    layers = []
    for i, (fan_in, fan_out) in enumerate(shapes):
        r = rng.split(f"layer{i}")
        bound = 1.0 / np.sqrt(fan_in)
        layers.append((r.uniform(-bound, bound, (fan_in, fan_out)), r.uniform(-bound, bound, fan_out)))
    return EncoderParams(layers, n_backbone=len(backbone) - 1)


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activation of each layer
    y: np.ndarray | None = None
    y_norm: np.ndarray | None = None
    z: np.ndarray | None = None
    n_layers: int = 0


def _relu_after(i: int, params: EncoderParams) -> bool:
    return i < params.n_backbone or i < len(params.layers) - 1


def encode_forward(params: EncoderParams, x):
    """Return ``(z, repr, cache)``; ``z`` rows are unit norm, ``repr`` is the backbone output."""
    h = as_mat(x, "input")
    if params.layers and h.shape[1] != params.layers[0][0].shape[0]:
        raise ShapeError(f"input has {h.shape[1]} columns, encoder expects {params.layers[0][0].shape[0]}")
    cache = ForwardCache(n_layers=len(params.layers))
    rep = h
    for i, (w, b) in enumerate(params.layers):
        cache.inputs.append(h)
        a = h @ w + b
        cache.pre.append(a)
        h = np.maximum(a, 0.0) if _relu_after(i, params) else a
        if i == params.n_backbone - 1:
            rep = h
    norms = np.sqrt(np.einsum("ij,ij->i", h, h))
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise DegenerateInputError(f"projection output of row {int(bad[0])} has zero norm")
    cache.y = h
    cache.y_norm = norms
    cache.z = h / norms[:, None]
    return cache.z, rep, cache


def sphere_backward(z: np.ndarray, y_norm: np.ndarray, dz: np.ndarray) -> np.ndarray:
    """Pull ``dL/dz`` back through ``z = y / |y|``: ``(I - z z^T) dz / |y|`` per row."""
    radial = np.einsum("ij,ij->i", z, dz)
    return (dz - z * radial[:, None]) / y_norm[:, None]


def encode_backward(params: EncoderParams, cache: ForwardCache, dz) -> list:
    """Gradients ``[(dW, db), ...]`` matching ``params.layers``."""
    if cache.n_layers != len(params.layers) or cache.z is None:
        raise ShapeError("forward cache does not match these parameters")
    dz = np.asarray(dz, dtype=np.float64)
    if dz.shape != cache.z.shape:
        raise ShapeError(f"dL/dz has shape {dz.shape}, expected {cache.z.shape}")
    g = sphere_backward(cache.z, cache.y_norm, dz)
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        if _relu_after(i, params):
            g = g * (cache.pre[i] > 0)
        grads[i] = (cache.inputs[i].T @ g, g.sum(axis=0))
        if i:
            g = g @ w.T
    return grads


@dataclass
class PrototypeBank:
    c: np.ndarray  # D x K, unit columns
    frozen: bool = False

    @property
    def k(self) -> int:
        return self.c.shape[1]


def init_prototypes(embed_dim: int, k: int, rng: Rng) -> PrototypeBank:
    return PrototypeBank(l2_normalize_cols(rng.normal(size=(embed_dim, k))))


def prototype_scores(z, bank: PrototypeBank) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[1] != bank.c.shape[0]:
        raise ShapeError(f"features have dim {z.shape[1]}, prototypes have dim {bank.c.shape[0]}")
    return z @ bank.c


def renormalize_prototypes(bank: PrototypeBank) -> PrototypeBank:
    return PrototypeBank(l2_normalize_cols(bank.c), bank.frozen)
