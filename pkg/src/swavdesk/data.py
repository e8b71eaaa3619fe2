"""Synthetic labelled corpora, the SSLD binary container, and stratified splits.

SSLD layout (little-endian)::

    magic    4 bytes  b"SSLD"
    version  u16      1
    kind     u8       0 = vector, 1 = image
    labels   u8       1 if a label block follows the payload
    n        u32      number of items
    dims     u32 x 1 (vector: D) or u32 x 3 (image: C, H, W)
    payload  f64 x n*prod(dims)
    labels   i64 x n  (only when the flag is set)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import ConfigError, Rng, SwavError

MAGIC = b"SSLD"
VERSION = 1
KIND_VECTOR = 0
KIND_IMAGE = 1


class DatasetFormatError(SwavError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    n_classes: int = 8
    raw_dim: int = 64
    latent_dim: int = 8
    n_samples: int = 4096
    class_separation: float = 4.0
    noise_sigma: float = 0.5
    raw_noise_sigma: float = 1.2
    hidden_dim: int = 64
    nonlinearity_seed: int = 1234

    def __post_init__(self):
        if self.n_samples < self.n_classes:
            raise ConfigError("n_samples must be >= n_classes")
        if min(self.n_classes, self.raw_dim, self.latent_dim, self.hidden_dim) < 1:
            raise ConfigError("dimensions must be >= 1")
        if self.noise_sigma < 0 or self.raw_noise_sigma < 0:
            raise ConfigError("noise levels must be nonnegative")


@dataclass
class Dataset:
    x: np.ndarray  # (N, D) for vectors, (N, C, H, W) for images
    labels: np.ndarray | None = None
    kind: int = KIND_VECTOR

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def item_shape(self) -> tuple:
        return tuple(self.x.shape[1:])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], None if self.labels is None else self.labels[idx], self.kind)

    def flat(self) -> np.ndarray:
        return self.x.reshape(len(self), -1)


def generate_synthetic(cfg: SyntheticConfig, rng: Rng) -> Dataset:
    """Gaussian classes on a latent sphere, lifted to ``raw_dim`` by a fixed random net.

    The lifting ``tanh(u W1 + b1) W2`` depends only on ``nonlinearity_seed``;
    isotropic sensor noise (``raw_noise_sigma``) is added in raw space.
    """
    net = Rng(cfg.nonlinearity_seed, "synthetic/lift")
    w1 = net.normal(size=(cfg.latent_dim, cfg.hidden_dim)) / np.sqrt(cfg.latent_dim)
    b1 = net.normal(size=cfg.hidden_dim) * 0.5
    w2 = net.normal(size=(cfg.hidden_dim, cfg.raw_dim)) / np.sqrt(cfg.hidden_dim)

    means = rng.split("means").normal(size=(cfg.n_classes, cfg.latent_dim))
    means *= cfg.class_separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = rng.split("labels").permutation(np.arange(cfg.n_samples) % cfg.n_classes)
    if cfg.noise_sigma > 0:
        u = means[labels] + rng.split("latent_noise").normal(0.0, cfg.noise_sigma, (cfg.n_samples, cfg.latent_dim))
        x = np.tanh(u @ w1 + b1) @ w2
    else:
        # lift the means once so members of a class are bit-identical
        x = (np.tanh(means @ w1 + b1) @ w2)[labels]
    if cfg.raw_noise_sigma > 0:
        x = x + rng.split("raw_noise").normal(0.0, cfg.raw_noise_sigma, x.shape)
    return Dataset(x, labels.astype(np.int64), KIND_VECTOR)


def generate_images(n_samples: int, n_classes: int, size: int, rng: Rng, channels: int = 3) -> Dataset:
    """Procedural texture classes: each class is an oriented grating with its own tint."""
    cls = Rng(rng.seed, "images/classes")
    angles = cls.uniform(0, np.pi, n_classes)
    freqs = cls.uniform(1.5, 4.0, n_classes)
    tints = cls.uniform(0.2, 1.0, (n_classes, channels))
    labels = rng.split("labels").permutation(np.arange(n_samples) % n_classes)
    yy, xx = np.mgrid[0:size, 0:size] / size
    phase = rng.split("phase").uniform(0, 2 * np.pi, n_samples)
    noise = rng.split("noise").normal(0, 0.05, (n_samples, channels, size, size))
    imgs = np.empty((n_samples, channels, size, size))
    for n, y in enumerate(labels):
        a = angles[y]
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * freqs[y] * (xx * np.cos(a) + yy * np.sin(a)) + phase[n])
        imgs[n] = tints[y][:, None, None] * wave[None]
    return Dataset(np.clip(imgs + noise, 0.0, 1.0), labels.astype(np.int64), KIND_IMAGE)


def save_dataset(path, ds: Dataset) -> None:
    x = np.ascontiguousarray(ds.x, dtype="<f8")
    dims = x.shape[1:]
    if ds.kind == KIND_VECTOR and len(dims) != 1 or ds.kind == KIND_IMAGE and len(dims) != 3:
        raise DatasetFormatError(f"kind {ds.kind} does not match item shape {dims}")
    has_labels = ds.labels is not None
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HBBI", VERSION, ds.kind, int(has_labels), x.shape[0]))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(x.tobytes())
        if has_labels:
            f.write(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DatasetFormatError(f"bad magic {raw[:4]!r} in {path}, expected {MAGIC!r}")
    if len(raw) < 12:
        raise DatasetFormatError(f"truncated header: expected 12 bytes, got {len(raw)}")
    version, kind, has_labels, n = struct.unpack_from("<HBBI", raw, 4)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}, expected {VERSION}")
    if kind not in (KIND_VECTOR, KIND_IMAGE):
        raise DatasetFormatError(f"unknown dataset kind {kind}")
    ndim = 1 if kind == KIND_VECTOR else 3
    off = 12 + 4 * ndim
    if len(raw) < off:
        raise DatasetFormatError(f"truncated header: expected {off} bytes, got {len(raw)}")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    n_vals = n * int(np.prod(dims))
    expected = off + 8 * n_vals + (8 * n if has_labels else 0)
    if len(raw) != expected:
        raise DatasetFormatError(f"payload size mismatch: expected {expected} bytes, got {len(raw)}")
    x = np.frombuffer(raw, dtype="<f8", count=n_vals, offset=off).reshape(n, *dims).astype(np.float64)
    labels = None
    if has_labels:
        labels = np.frombuffer(raw, dtype="<i8", count=n, offset=off + 8 * n_vals).astype(np.int64)
    return Dataset(x, labels, kind)


def split(labels, fractions, rng: Rng) -> list:
    """Stratified, disjoint, covering index partitions with the given fractions.

    Items of each class are shuffled and spread evenly over [0, 1); every
    partition takes a contiguous quantile band, so each class is split in
    proportion and partition sizes are exact up to rounding.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be nonnegative and sum to 1, got {list(fractions)}")
    labels = np.asarray(labels)
    n = labels.shape[0]
    keys = np.empty(n)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.split(f"class{c}").permutation(members.size)]
        keys[members] = (np.arange(members.size) + 0.5) / members.size
    order = np.lexsort((labels, keys))
    bounds = np.rint(np.concatenate([[0.0], np.cumsum(fr)]) * n).astype(int)
    bounds[-1] = n
    return [np.sort(order[bounds[i]:bounds[i + 1]]) for i in range(fr.size)]
