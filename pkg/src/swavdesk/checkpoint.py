"""SWCK checkpoint files: a small header followed by named float64 arrays.

Layout (little-endian)::

    magic        4 bytes  b"SWCK"
    version      u16      1
    config_hash  u64
    epoch        i32      last completed epoch (0-based), -1 if none
    n_arrays     u32
    then per array:
        name_len u16, name (UTF-8), rank u8, dims u32 x rank, data f64 x prod(dims)

Arrays are written in insertion order, so save -> load -> save reproduces the
file byte for byte.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .feature_queue import FeatureQueue
from .model import EncoderParams, PrototypeBank
from .numerics import SwavError
from .training import FeatureArchive, TrainConfig, TrainState

MAGIC = b"SWCK"
VERSION = 1
_HEADER = struct.Struct("<4sHQiI")


class CheckpointError(SwavError):
    pass


@dataclass
class Checkpoint:
    config_hash: int
    epoch: int
    arrays: dict = field(default_factory=dict)


def encode_checkpoint(ck: Checkpoint) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, ck.config_hash, ck.epoch, len(ck.arrays))]
    for name, arr in ck.arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<B{a.ndim}I", a.ndim, *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def decode_checkpoint(raw: bytes) -> Checkpoint:
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"truncated checkpoint header: {len(raw)} < {_HEADER.size} bytes")
    magic, version, chash, epoch, n = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = _HEADER.size
    arrays = {}
    try:
        for _ in range(n):
            (name_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if off + 8 * count > len(raw):
                raise CheckpointError(f"array {name!r} truncated: need {8 * count} bytes, have {len(raw) - off}")
            arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(dims).astype(np.float64)
            off += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(raw):
        raise CheckpointError(f"{len(raw) - off} trailing bytes after last array")
    return Checkpoint(chash, epoch, arrays)


def save_checkpoint(path, ck: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    return decode_checkpoint(p.read_bytes())


def state_to_checkpoint(state: TrainState, config_hash: int) -> Checkpoint:
    a = {}
    a["meta.input_dim"] = np.array([state.input_dim])
    a["meta.n_backbone"] = np.array([state.encoder.n_backbone])
    a["meta.step"] = np.array([state.step])
    seed = int(state.cfg.seed) & (2**64 - 1)
    a["rng.seed"] = np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.float64)
    a.update(state.encoder.named_arrays())
    for h, bank in enumerate(state.heads):
        a[f"prototypes.{h}"] = bank.c
    for name in sorted(state.opt_state):
        a[f"opt.{name}"] = state.opt_state[name]
    for i, q in enumerate(state.queues):
        a.update(q.state_arrays(f"queue.{i}"))
    if state.archive is not None:
        a["archive.rows"] = state.archive.rows
        a["archive.filled"] = state.archive.filled.astype(np.float64)
    if state.pseudo_labels is not None:
        for h, q in enumerate(state.pseudo_labels):
            a[f"pseudo.{h}"] = q
    return Checkpoint(config_hash, state.epoch - 1, a)


def _require(arrays: dict, names) -> None:
    missing = [n for n in names if n not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint is missing arrays: {', '.join(missing)}")


def encoder_from_checkpoint(ck: Checkpoint) -> EncoderParams:
    layers = []
    i = 0
    while f"encoder.{i}.weight" in ck.arrays:
        layers.append((ck.arrays[f"encoder.{i}.weight"], ck.arrays[f"encoder.{i}.bias"]))
        i += 1
    if not layers:
        raise CheckpointError("checkpoint holds no encoder layers")
    _require(ck.arrays, ["meta.n_backbone"])
    return EncoderParams(layers, int(ck.arrays["meta.n_backbone"][0]))


def prototypes_from_checkpoint(ck: Checkpoint) -> list:
    heads = []
    while f"prototypes.{len(heads)}" in ck.arrays:
        heads.append(PrototypeBank(ck.arrays[f"prototypes.{len(heads)}"]))
    return heads


def state_from_checkpoint(ck: Checkpoint, cfg: TrainConfig) -> TrainState:
    a = ck.arrays
    _require(a, ["meta.input_dim", "meta.n_backbone", "meta.step", "rng.seed"])
    if cfg.method != "simclr":
        _require(a, [f"prototypes.{h}" for h in range(cfg.n_heads)])
    seed_parts = a["rng.seed"]
    seed = int(seed_parts[0]) | (int(seed_parts[1]) << 32)
    if seed != cfg.seed:
        cfg = cfg.replace(seed=seed)
    state = TrainState(
        cfg=cfg,
        input_dim=int(a["meta.input_dim"][0]),
        encoder=encoder_from_checkpoint(ck),
        heads=prototypes_from_checkpoint(ck),
        opt_state={k[4:]: v for k, v in a.items() if k.startswith("opt.")},
        epoch=ck.epoch + 1,
        step=int(a["meta.step"][0]),
    )
    if cfg.method == "swav" and cfg.queue_length > 0:
        n_q = 1 if cfg.queue_shared else cfg.n_global
        for i in range(n_q):
            q = FeatureQueue(cfg.embed_dim, cfg.queue_length, cfg.resolved_queue_start())
            q.load_rows(a.get(f"queue.{i}.rows", np.zeros((0, cfg.embed_dim))))
            state.queues.append(q)
    if "archive.rows" in a:
        state.archive = FeatureArchive(a["archive.rows"].copy(), a["archive.filled"] > 0.5)
    if "pseudo.0" in a:
        labels = []
        while f"pseudo.{len(labels)}" in a:
            labels.append(a[f"pseudo.{len(labels)}"])
        state.pseudo_labels = labels
    return state
