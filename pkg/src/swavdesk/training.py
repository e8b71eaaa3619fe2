"""Optimisation loops for SwAV, DeepCluster-v2, SeLa-v2 and multi-crop SimCLR.

All four methods share the encoder, the optimiser and the view pipeline; they
differ in where the per-view targets come from:

* ``swav``: balanced soft codes computed online on each batch (optionally
  enlarged by a feature queue) and predicted from the other views;
* ``deepcluster_v2``: hard labels from spherical k-means over last epoch's
  features, with the centroids used directly as the classifier;
* ``sela_v2``: balanced codes over the whole archive, prototypes learned;
* ``simclr``: no targets, instance contrast across crops.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import (
    KMeansConfig,
    SinkhornConfig,
    round_to_hard,
    sinkhorn_codes,
    spherical_kmeans,
)
from .augmentation import MultiCropSpec, VectorAugConfig, VectorViewSpec, multicrop_image, resize_bilinear, vector_views
from .data import KIND_IMAGE, Dataset
from .evaluation import collapse_diagnostics
from .feature_queue import FeatureQueue
from .losses import LossConfig, ViewBatch, cluster_pred_loss, simclr_multicrop_loss, swapped_loss
from .model import (
    EncoderConfig,
    EncoderParams,
    PrototypeBank,
    encode_backward,
    encode_forward,
    init_encoder,
    init_prototypes,
    renormalize_prototypes,
)
from .numerics import ConfigError, Rng, SwavError, l2_normalize_cols

log = logging.getLogger(__name__)

METHODS = ("swav", "deepcluster_v2", "sela_v2", "simclr")


class TrainingAborted(SwavError, ArithmeticError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 0.6
    final_lr: float = 0.0006
    warmup_epochs: int = 0
    momentum: float = 0.9
    weight_decay: float = 1e-6
    use_lars: bool = False
    lars_eta: float = 0.001

    def __post_init__(self):
        if not self.base_lr > 0 or self.final_lr < 0 or self.warmup_epochs < 0:
            raise ConfigError(f"invalid optimiser settings {self}")


@dataclass(frozen=True)
class TrainConfig:
    """Flat run configuration; every field is also a key of the text config file."""

    method: str = "swav"
    epochs: int = 30
    batch_size: int = 128
    seed: int = 0
    # prototypes / assignment
    k_prototypes: int = 32
    n_heads: int = 1
    eps: float = 0.05
    sinkhorn_iters: int = 3
    sinkhorn_log_domain: bool = False
    offline_sinkhorn_iters: int = 100
    kmeans_iters: int = 10
    tau: float = 0.2
    hard_codes: bool = False
    learn_prototypes: bool = True
    freeze_prototypes_epochs: int = 1
    # feature queue (0 disables)
    queue_length: int = 0
    queue_start_epoch: int = -1  # -1: 5% of the run
    queue_shared: bool = False
    # encoder
    hidden_dims: tuple = (128,)
    repr_dim: int = 64
    proj_hidden_dim: int = 64
    embed_dim: int = 32
    # views
    n_global: int = 2
    n_local: int = 0
    global_noise: float = 0.8
    global_dropout: float = 0.0
    global_scale_jitter: tuple = (0.8, 1.2)
    local_noise: float = 0.8
    local_dropout: float = 0.5
    local_scale_jitter: tuple = (0.8, 1.2)
    crop_global_size: int = 16
    crop_local_size: int = 8
    crop_global_scale: tuple = (0.14, 1.0)
    crop_local_scale: tuple = (0.05, 0.14)
    # optimiser
    base_lr: float = 0.05
    final_lr: float = 0.0005
    warmup_epochs: int = 0
    momentum: float = 0.9
    weight_decay: float = 1e-6
    use_lars: bool = False
    lars_eta: float = 0.001

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.k_prototypes < 1 or self.n_heads < 1:
            raise ConfigError("k_prototypes and n_heads must be >= 1")
        if self.n_global < 1 or self.n_local < 0:
            raise ConfigError("need n_global >= 1 and n_local >= 0")
        if self.method == "swav" and self.n_global + self.n_local < 2:
            raise ConfigError("swav needs at least two views")
        self.sinkhorn()
        self.optim()
        self.loss()
        self.vector_views()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def sinkhorn(self) -> SinkhornConfig:
        return SinkhornConfig(self.eps, self.sinkhorn_iters, self.sinkhorn_log_domain)

    def optim(self) -> OptimConfig:
        return OptimConfig(self.base_lr, self.final_lr, self.warmup_epochs, self.momentum,
                           self.weight_decay, self.use_lars, self.lars_eta)

    def loss(self) -> LossConfig:
        return LossConfig(self.tau)

    def encoder(self, input_dim: int) -> EncoderConfig:
        return EncoderConfig(input_dim, tuple(self.hidden_dims), self.repr_dim, self.proj_hidden_dim, self.embed_dim)

    def vector_views(self) -> VectorViewSpec:
        return VectorViewSpec(
            self.n_global,
            self.n_local,
            VectorAugConfig(self.global_noise, self.global_dropout, tuple(self.global_scale_jitter)),
            VectorAugConfig(self.local_noise, self.local_dropout, tuple(self.local_scale_jitter)),
        )

    def crop_spec(self) -> MultiCropSpec:
        return MultiCropSpec(
            n_global=self.n_global, global_scale=tuple(self.crop_global_scale), global_size=self.crop_global_size,
            n_local=self.n_local, local_scale=tuple(self.crop_local_scale), local_size=self.crop_local_size,
        )

    def resolved_queue_start(self) -> int:
        if self.queue_start_epoch >= 0:
            return self.queue_start_epoch
        return max(1, int(round(0.05 * self.epochs)))


def cosine_lr(step: int, total_steps: int, cfg: OptimConfig, warmup_steps: int | None = None) -> float:
    """Linear warmup from 0 to ``base_lr`` then cosine decay to ``final_lr``.

    ``warmup_steps`` defaults to ``warmup_epochs`` interpreted in steps.
    """
    warm = cfg.warmup_epochs if warmup_steps is None else warmup_steps
    if warm > 0 and step < warm:
        return cfg.base_lr * step / warm
    span = total_steps - warm
    if span <= 0:
        return cfg.base_lr
    progress = min(max((step - warm) / span, 0.0), 1.0)
    return cfg.final_lr + 0.5 * (cfg.base_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * progress))


def optimizer_step(params: dict, grads: dict, lr: float, state: dict, cfg: OptimConfig,
                   weight_decay: float | None = None) -> tuple[dict, dict]:
    """SGD with momentum (optionally LARS-scaled) over named arrays.

    ``v <- momentum * v + trust * (grad + wd * param)``, ``param <- param - lr * v``
    where ``trust`` is 1 for plain SGD.
    """
    wd = cfg.weight_decay if weight_decay is None else weight_decay
    new_params, new_state = {}, dict(state)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient in {name} (max |g| = {np.nanmax(np.abs(g)):.3g})")
        d = g + wd * p if wd else g
        if cfg.use_lars:
            p_norm = float(np.linalg.norm(p))
            g_norm = float(np.linalg.norm(g))
            if p_norm > 0 and g_norm > 0:
                d = d * (cfg.lars_eta * p_norm / (g_norm + wd * p_norm))
        v = state.get(name)
        v = d.copy() if v is None else cfg.momentum * v + d
        new_state[name] = v
        new_params[name] = p - lr * v
    return new_params, new_state


@dataclass
class FeatureArchive:
    """Last-seen projected feature of every dataset instance (one row each)."""

    rows: np.ndarray
    filled: np.ndarray

    @classmethod
    def empty(cls, n: int, dim: int) -> "FeatureArchive":
        return cls(np.zeros((n, dim)), np.zeros(n, dtype=bool))

    @property
    def warm(self) -> bool:
        return bool(self.filled.all())

    def store(self, idx, z) -> None:
        self.rows[idx] = z
        self.filled[idx] = True


@dataclass
class TrainState:
    cfg: TrainConfig
    input_dim: int
    encoder: EncoderParams
    heads: list
    opt_state: dict = field(default_factory=dict)
    queues: list = field(default_factory=list)
    archive: FeatureArchive | None = None
    pseudo_labels: list | None = None
    epoch: int = 0  # next epoch to run
    step: int = 0


def _input_dim(data: Dataset, cfg: TrainConfig) -> int:
    if data.kind == KIND_IMAGE:
        return data.x.shape[1] * cfg.crop_global_size**2
    return data.x.shape[1]


def init_state(cfg: TrainConfig, data: Dataset) -> TrainState:
    rng = Rng(cfg.seed, "init")
    input_dim = _input_dim(data, cfg)
    enc = init_encoder(cfg.encoder(input_dim), rng.split("encoder"))
    heads = []
    if cfg.method != "simclr":
        heads = [init_prototypes(cfg.embed_dim, cfg.k_prototypes, rng.split(f"prototypes{h}")) for h in range(cfg.n_heads)]
    queues = []
    if cfg.method == "swav" and cfg.queue_length > 0:
        n_q = 1 if cfg.queue_shared else cfg.n_global
        queues = [FeatureQueue(cfg.embed_dim, cfg.queue_length, cfg.resolved_queue_start()) for _ in range(n_q)]
    archive = FeatureArchive.empty(len(data), cfg.embed_dim) if cfg.method in ("deepcluster_v2", "sela_v2") else None
    return TrainState(cfg, input_dim, enc, heads, {}, queues, archive)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return len(_batches(np.arange(n), batch_size))


def _batches(order: np.ndarray, batch_size: int) -> list:
    chunks = [order[i:i + batch_size] for i in range(0, order.size, batch_size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        chunks[-2] = np.concatenate(chunks[-2:])
        chunks.pop()
    return chunks


def make_views(data: Dataset, idx: np.ndarray, cfg: TrainConfig, rng: Rng) -> list:
    """Augmented views of ``data[idx]`` as flat matrices, global views first."""
    if data.kind != KIND_IMAGE:
        return vector_views(data.x[idx], cfg.vector_views(), rng)
    spec = cfg.crop_spec()
    size = spec.global_size
    per_view = [[] for _ in range(spec.n_views)]
    for i in idx:
        for j, v in enumerate(multicrop_image(data.x[i], spec, rng.split(f"item{int(i)}"))):
            if v.shape[1] != size:
                # the MLP needs a fixed input size, so local crops are upsampled
                v = resize_bilinear(v, size, size)
            per_view[j].append(v.reshape(-1))
    return [np.stack(v) for v in per_view]


def _encode_views(state: TrainState, views: list):
    b = views[0].shape[0]
    z_all, _, cache = encode_forward(state.encoder, np.concatenate(views, axis=0))
    return [z_all[i * b:(i + 1) * b] for i in range(len(views))], cache


def _update_encoder(state: TrainState, cache, d_views: list, lr: float) -> None:
    grads = encode_backward(state.encoder, cache, np.concatenate(d_views, axis=0))
    named = state.encoder.named_arrays()
    gnamed = {}
    for i, (gw, gb) in enumerate(grads):
        gnamed[f"encoder.{i}.weight"] = gw
        gnamed[f"encoder.{i}.bias"] = gb
    new, opt = optimizer_step(named, gnamed, lr, state.opt_state, state.cfg.optim())
    state.opt_state = opt
    state.encoder = EncoderParams(
        [(new[f"encoder.{i}.weight"], new[f"encoder.{i}.bias"]) for i in range(len(state.encoder.layers))],
        state.encoder.n_backbone,
    )


def _update_prototypes(state: TrainState, h: int, grad: np.ndarray, lr: float) -> None:
    name = f"prototypes.{h}"
    new, opt = optimizer_step({name: state.heads[h].c}, {name: grad}, lr, state.opt_state,
                              state.cfg.optim(), weight_decay=0.0)
    state.opt_state = opt
    state.heads[h] = PrototypeBank(new[name], state.heads[h].frozen)


def prototypes_trainable(state: TrainState, epoch: int) -> bool:
    cfg = state.cfg
    return cfg.learn_prototypes and epoch >= cfg.freeze_prototypes_epochs


def _check_loss(value: float, epoch: int, batch: int) -> None:
    if not math.isfinite(value):
        raise TrainingAborted(f"non-finite loss at epoch {epoch}, batch {batch}")


def _epoch_setup(state: TrainState, n: int):
    cfg = state.cfg
    rng = Rng(cfg.seed, "train").split(f"epoch{state.epoch}")
    order = rng.split("order").permutation(n)
    return rng, _batches(order, cfg.batch_size)


def current_lr(state: TrainState, n: int) -> float:
    cfg = state.cfg
    per_epoch = steps_per_epoch(n, cfg.batch_size)
    return cosine_lr(state.step, per_epoch * cfg.epochs, cfg.optim(), per_epoch * cfg.warmup_epochs)


def _epoch_metrics(state, losses, lr, codes, feats) -> dict:
    entropy, std, collapsed = collapse_diagnostics(codes, feats)
    return {
        "epoch": state.epoch,
        "method": state.cfg.method,
        "loss": float(np.mean(losses)),
        "lr": float(lr),
        "code_mean_entropy": None if math.isnan(entropy) else entropy,
        "feature_std": std,
        "collapse": collapsed,
    }


def swav_codes(state: TrainState, zs: list, epoch: int) -> list:
    """Targets for the global views, each from its own (possibly queue-enlarged) problem."""
    cfg = state.cfg
    sk = cfg.sinkhorn()
    bank = state.heads[0]
    codes = []
    for i in range(cfg.n_global):
        z = zs[i]
        if state.queues:
            q = state.queues[0 if cfg.queue_shared else i]
            if q.enabled(epoch):
                z, _ = q.assemble(z)
        code = sinkhorn_codes(z @ bank.c, sk)[: zs[i].shape[0]]
        codes.append(round_to_hard(code) if cfg.hard_codes else code)
    return codes


def train_epoch_swav(state: TrainState, data: Dataset) -> tuple[TrainState, dict]:
    cfg = state.cfg
    epoch = state.epoch
    rng, batches = _epoch_setup(state, len(data))
    losses, codes_seen, feats = [], [], []
    lr = current_lr(state, len(data))
    for bi, idx in enumerate(batches):
        views = make_views(data, idx, cfg, rng.split(f"batch{bi}"))
        zs, cache = _encode_views(state, views)
        codes = swav_codes(state, zs, epoch)
        out = swapped_loss(ViewBatch(zs, cfg.n_global), state.heads[0], codes, cfg.loss())
        _check_loss(out.loss, epoch, bi)
        lr = current_lr(state, len(data))
        _update_encoder(state, cache, out.d_views, lr)
        if prototypes_trainable(state, epoch) and not state.heads[0].frozen:
            _update_prototypes(state, 0, out.d_prototypes, lr)
        state.heads[0] = renormalize_prototypes(state.heads[0])
        for i, q in enumerate(state.queues):
            if cfg.queue_shared:
                for z in zs[: cfg.n_global]:
                    q.push_batch(z)
            else:
                q.push_batch(zs[i])
        state.step += 1
        losses.append(out.loss)
        codes_seen.append(codes[0])
        feats.append(zs[0])
    metrics = _epoch_metrics(state, losses, lr, codes_seen, np.concatenate(feats))
    state.epoch += 1
    return state, metrics


def train_epoch_simclr(state: TrainState, data: Dataset) -> tuple[TrainState, dict]:
    cfg = state.cfg
    rng, batches = _epoch_setup(state, len(data))
    losses, feats = [], []
    lr = current_lr(state, len(data))
    for bi, idx in enumerate(batches):
        views = make_views(data, idx, cfg, rng.split(f"batch{bi}"))
        zs, cache = _encode_views(state, views)
        out = simclr_multicrop_loss(ViewBatch(zs, cfg.n_global), cfg.loss())
        _check_loss(out.loss, state.epoch, bi)
        lr = current_lr(state, len(data))
        _update_encoder(state, cache, out.d_views, lr)
        state.step += 1
        losses.append(out.loss)
        feats.append(zs[0])
    metrics = _epoch_metrics(state, losses, lr, [], np.concatenate(feats))
    state.epoch += 1
    return state, metrics


def random_balanced_labels(n: int, k: int, rng: Rng) -> np.ndarray:
    labels = rng.permutation(np.arange(n) % k)
    out = np.zeros((n, k))
    out[np.arange(n), labels] = 1.0
    return out


def assignment_phase_offline(method: str, archive: FeatureArchive, heads: list, cfg: TrainConfig,
                             rng: Rng | None = None) -> tuple[list, list]:
    """Pseudo-labels (N x K per head) from last epoch's features.

    Returns ``(labels, heads)``; for DeepCluster-v2 the returned heads carry the
    new k-means centroids as prototypes.
    """
    if not archive.warm:
        missing = int((~archive.filled).sum())
        raise SwavError(f"feature archive is cold ({missing} instances missing); run a warm-up epoch first")
    rng = rng if rng is not None else Rng(cfg.seed, "assignment")
    labels, new_heads = [], []
    for h, bank in enumerate(heads):
        if method == "deepcluster_v2":
            km = spherical_kmeans(archive.rows, KMeansConfig(bank.k, cfg.kmeans_iters, cfg.seed), rng.split(f"head{h}"))
            q = np.zeros((archive.rows.shape[0], bank.k))
            q[np.arange(q.shape[0]), km.assignments] = 1.0
            labels.append(q)
            new_heads.append(PrototypeBank(l2_normalize_cols(km.centroids.T), bank.frozen))
        elif method == "sela_v2":
            sk = SinkhornConfig(cfg.eps, cfg.offline_sinkhorn_iters, cfg.sinkhorn_log_domain)
            labels.append(sinkhorn_codes(archive.rows @ bank.c, sk))
            new_heads.append(bank)
        else:
            raise ConfigError(f"no offline assignment phase for method {method!r}")
    return labels, new_heads


def train_epoch_offline(state: TrainState, data: Dataset, pseudo_labels: list | None = None) -> tuple[TrainState, dict]:
    """One training phase against fixed pseudo-labels, refreshing the archive.

    Without explicit labels, the assignment phase runs on the archive when it
    is warm and falls back to random balanced labels otherwise (first epoch).
    """
    cfg = state.cfg
    epoch = state.epoch
    rng, batches = _epoch_setup(state, len(data))
    if pseudo_labels is None:
        if state.archive.warm:
            pseudo_labels, state.heads = assignment_phase_offline(cfg.method, state.archive, state.heads, cfg,
                                                                  rng.split("assign"))
        else:
            pseudo_labels = [random_balanced_labels(len(data), b.k, rng.split(f"cold{h}"))
                             for h, b in enumerate(state.heads)]
    state.pseudo_labels = pseudo_labels
    learn_c = cfg.method == "sela_v2" and prototypes_trainable(state, epoch)
    losses, codes_seen, feats = [], [], []
    lr = current_lr(state, len(data))
    n_views = cfg.n_global + cfg.n_local
    for bi, idx in enumerate(batches):
        views = make_views(data, idx, cfg, rng.split(f"batch{bi}"))
        zs, cache = _encode_views(state, views)
        d_views = [np.zeros_like(z) for z in zs]
        d_heads = [np.zeros_like(b.c) for b in state.heads]
        batch_loss = 0.0
        weight = 1.0 / (len(state.heads) * n_views)
        for h, bank in enumerate(state.heads):
            q = pseudo_labels[h][idx]
            for v, z in enumerate(zs):
                out = cluster_pred_loss(z, bank, q, cfg.loss())
                batch_loss += weight * out.loss
                d_views[v] += weight * out.d_views[0]
                d_heads[h] += weight * out.d_prototypes
        _check_loss(batch_loss, epoch, bi)
        lr = current_lr(state, len(data))
        _update_encoder(state, cache, d_views, lr)
        if learn_c:
            for h in range(len(state.heads)):
                if not state.heads[h].frozen:
                    _update_prototypes(state, h, d_heads[h], lr)
                state.heads[h] = renormalize_prototypes(state.heads[h])
        state.archive.store(idx, zs[0])
        state.step += 1
        losses.append(batch_loss)
        codes_seen.append(pseudo_labels[0][idx])
        feats.append(zs[0])
    metrics = _epoch_metrics(state, losses, lr, codes_seen, np.concatenate(feats))
    state.epoch += 1
    return state, metrics


def train_epoch(state: TrainState, data: Dataset) -> tuple[TrainState, dict]:
    method = state.cfg.method
    if method == "swav":
        return train_epoch_swav(state, data)
    if method == "simclr":
        return train_epoch_simclr(state, data)
    return train_epoch_offline(state, data)


def train(cfg: TrainConfig, data: Dataset, state: TrainState | None = None, callback=None) -> tuple[TrainState, list]:
    """Run epochs ``state.epoch .. cfg.epochs - 1``; ``callback(state, metrics)`` after each."""
    state = state if state is not None else init_state(cfg, data)
    history = []
    while state.epoch < cfg.epochs:
        state, metrics = train_epoch(state, data)
        log.info("epoch %d loss %.5f lr %.4g", metrics["epoch"], metrics["loss"], metrics["lr"])
        history.append(metrics)
        if callback is not None:
            callback(state, metrics)
    return state, history


def representations(state: TrainState, data: Dataset, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Backbone (evaluation tap) and projected features of un-augmented inputs."""
    if data.kind == KIND_IMAGE:
        size = state.cfg.crop_global_size
        x = np.stack([resize_bilinear(img, size, size).reshape(-1) for img in data.x])
    else:
        x = data.x
    reps, zs = [], []
    for start in range(0, x.shape[0], chunk):
        z, rep, _ = encode_forward(state.encoder, x[start:start + chunk])
        reps.append(rep)
        zs.append(z)
    return np.concatenate(reps), np.concatenate(zs)


__all__ = [
    "METHODS", "OptimConfig", "TrainConfig", "TrainState", "FeatureArchive", "TrainingAborted",
    "cosine_lr", "optimizer_step", "init_state", "train_epoch_swav", "train_epoch_simclr",
    "train_epoch_offline", "assignment_phase_offline", "train_epoch", "train", "representations",
    "make_views", "swav_codes", "current_lr", "steps_per_epoch", "random_balanced_labels",
]
