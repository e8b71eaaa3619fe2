"""Multi-crop view generation for small images and perturbation views for vectors.

Images are float arrays of shape ``(C, H, W)`` with values in ``[0, 1]``.
Every random decision draws from its own labelled stream (geometry, flip,
jitter, blur) so changing one transform's parameters never shifts the draws
of another.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .numerics import ConfigError, DegenerateInputError, Rng, ShapeError

ASPECT_RANGE = (3.0 / 4.0, 4.0 / 3.0)
CROP_ATTEMPTS = 10


def _check_scale(name, rng_pair):
    lo, hi = rng_pair
    if not (0 < lo <= hi <= 1):
        raise ConfigError(f"{name} must satisfy 0 < lo <= hi <= 1, got {rng_pair}")


@dataclass(frozen=True)
class MultiCropSpec:
    n_global: int = 2
    global_scale: tuple = (0.14, 1.0)
    global_size: int = 32
    n_local: int = 4
    local_scale: tuple = (0.05, 0.14)
    local_size: int = 16
    flip_prob: float = 0.5
    color_jitter_strength: float = 0.4
    grayscale_prob: float = 0.2
    blur_sigma_range: tuple | None = (0.1, 2.0)
    blur_prob: float = 0.5

    def __post_init__(self):
        _check_scale("global_scale", self.global_scale)
        _check_scale("local_scale", self.local_scale)
        if self.global_size < 4 or self.local_size < 4:
            raise ConfigError("crop sizes must be at least 4 pixels")
        if self.n_global < 1 or self.n_local < 0:
            raise ConfigError("need n_global >= 1 and n_local >= 0")

    @property
    def n_views(self) -> int:
        return self.n_global + self.n_local


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centres (no antialiasing)."""
    c, h, w = img.shape

    def coords(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(h, out_h)
    x0, x1, fx = coords(w, out_w)
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def sample_crop(h: int, w: int, scale, rng: Rng) -> tuple[int, int, int, int]:
    """Area/aspect rejection sampler; returns ``(top, left, height, width)``."""
    area = h * w
    for _ in range(CROP_ATTEMPTS):
        target = area * rng.uniform(scale[0], scale[1])
        ratio = rng.uniform(*ASPECT_RANGE)
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    # center crop fallback with the aspect ratio clamped into range
    in_ratio = w / h
    if in_ratio < ASPECT_RANGE[0]:
        cw, ch = w, int(round(w / ASPECT_RANGE[0]))
    elif in_ratio > ASPECT_RANGE[1]:
        ch, cw = h, int(round(h * ASPECT_RANGE[1]))
    else:
        cw, ch = w, h
    if ch < 1 or cw < 1:
        raise DegenerateInputError(f"cannot crop a {h}x{w} image")
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def _color_jitter(img: np.ndarray, strength: float, gray_prob: float, rng: Rng) -> np.ndarray:
    c = img.shape[0]
    if strength > 0:
        bright = rng.uniform(1 - strength, 1 + strength, c)
        contrast = rng.uniform(1 - strength, 1 + strength, c)
        mean = img.mean(axis=(1, 2), keepdims=True)
        img = (img * bright[:, None, None] - mean) * contrast[:, None, None] + mean
        img = np.clip(img, 0.0, 1.0)
    if gray_prob > 0 and c > 1 and rng.random() < gray_prob:
        img = np.repeat(img.mean(axis=0, keepdims=True), c, axis=0)
    return img


def _view(img, scale, size, spec: MultiCropSpec, streams: dict, j: int) -> np.ndarray:
    c, h, w = img.shape
    top, left, ch, cw = sample_crop(h, w, scale, streams["geometry"].split(j))
    out = resize_bilinear(img[:, top:top + ch, left:left + cw], size, size)
    if spec.flip_prob > 0 and streams["flip"].split(j).random() < spec.flip_prob:
        out = out[:, :, ::-1]
    out = _color_jitter(out, spec.color_jitter_strength, spec.grayscale_prob, streams["jitter"].split(j))
    if spec.blur_sigma_range and spec.blur_prob > 0:
        r = streams["blur"].split(j)
        if r.random() < spec.blur_prob:
            sigma = r.uniform(*spec.blur_sigma_range)
            out = np.stack([gaussian_filter(ch_, sigma, mode="reflect") for ch_ in out])
    return np.ascontiguousarray(out)


def multicrop_image(img, spec: MultiCropSpec, rng: Rng) -> list:
    """``n_global`` views at ``global_size`` followed by ``n_local`` at ``local_size``."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or min(img.shape) < 1:
        raise ShapeError(f"image must have shape (C, H, W), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise DegenerateInputError("image contains non-finite values")
    streams = {name: rng.split(name) for name in ("geometry", "flip", "jitter", "blur")}
    views = [_view(img, spec.global_scale, spec.global_size, spec, streams, j) for j in range(spec.n_global)]
    views += [
        _view(img, spec.local_scale, spec.local_size, spec, streams, spec.n_global + j)
        for j in range(spec.n_local)
    ]
    return views


@dataclass(frozen=True)
class VectorAugConfig:
    noise_sigma: float = 0.0
    dropout_prob: float = 0.0
    scale_jitter: tuple = (1.0, 1.0)

    def __post_init__(self):
        lo, hi = self.scale_jitter
        if self.noise_sigma < 0 or self.dropout_prob < 0 or lo < 0 or hi < lo:
            raise ConfigError(f"invalid vector augmentation {self}")
        if self.dropout_prob >= 1:
            raise ConfigError(f"dropout_prob must be < 1, got {self.dropout_prob}")


def augment_batch(x, cfg: VectorAugConfig, rng: Rng) -> np.ndarray:
    """Row-wise ``scale * (x + noise)`` with coordinates zeroed at ``dropout_prob``."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    out = x
    if cfg.noise_sigma > 0:
        out = out + rng.split("noise").normal(0.0, cfg.noise_sigma, (n, d))
    if cfg.dropout_prob > 0:
        out = out * (rng.split("dropout").random((n, d)) >= cfg.dropout_prob)
    lo, hi = cfg.scale_jitter
    if hi > lo or lo != 1.0:
        out = out * rng.split("scale").uniform(lo, hi, n)[:, None]
    return out.copy() if out is x else out


def augment_vector(x, cfg: VectorAugConfig, rng: Rng) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DegenerateInputError("input vector contains non-finite values")
    return augment_batch(x.reshape(1, -1), cfg, rng)[0]


@dataclass(frozen=True)
class VectorViewSpec:
    """Vector analogue of multi-crop: global views get mild perturbation, local
    views see a smaller random subset of coordinates."""

    n_global: int = 2
    n_local: int = 0
    global_aug: VectorAugConfig = VectorAugConfig(noise_sigma=0.8, dropout_prob=0.0, scale_jitter=(0.8, 1.2))
    local_aug: VectorAugConfig = VectorAugConfig(noise_sigma=0.8, dropout_prob=0.5, scale_jitter=(0.8, 1.2))

    @property
    def n_views(self) -> int:
        return self.n_global + self.n_local


def vector_views(x, spec: VectorViewSpec, rng: Rng) -> list:
    views = [augment_batch(x, spec.global_aug, rng.split(f"view{j}")) for j in range(spec.n_global)]
    views += [
        augment_batch(x, spec.local_aug, rng.split(f"view{spec.n_global + j}")) for j in range(spec.n_local)
    ]
    return views
