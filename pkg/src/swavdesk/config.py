"""Flat ``key = value`` run configuration.

Training keys are the field names of :class:`~swavdesk.training.TrainConfig`;
data keys carry a ``data.`` prefix.  Blank lines and ``#`` comments are
ignored; tuples are comma separated; booleans are ``true``/``false``.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SyntheticConfig
from .numerics import ConfigError
from .training import TrainConfig


@dataclass(frozen=True)
class DataSection:
    path: str = ""  # SSLD file; empty means generate the synthetic mixture
    seed: int = 0
    holdout_fraction: float = 0.25
    n_classes: int = 8
    raw_dim: int = 64
    latent_dim: int = 8
    n_samples: int = 4096
    class_separation: float = 4.0
    noise_sigma: float = 0.5
    raw_noise_sigma: float = 1.2
    hidden_dim: int = 64
    nonlinearity_seed: int = 1234

    def synthetic(self) -> SyntheticConfig:
        return SyntheticConfig(self.n_classes, self.raw_dim, self.latent_dim, self.n_samples,
                               self.class_separation, self.noise_sigma, self.raw_noise_sigma,
                               self.hidden_dim, self.nonlinearity_seed)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    checkpoint_every: int = 10

    def replace_train(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, train=self.train.replace(**changes))


def _schema() -> dict:
    """Map config key -> (section, field, default)."""
    out = {}
    for f in fields(TrainConfig):
        out[f.name] = ("train", f.name, f.default)
    for f in fields(DataSection):
        out[f"data.{f.name}"] = ("data", f.name, f.default)
    out["checkpoint_every"] = ("run", "checkpoint_every", RunConfig.checkpoint_every)
    return out


SCHEMA = _schema()


def _parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in text.split(",") if p.strip())
        return text
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {text!r}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    sections = {"train": {}, "data": {}, "run": {}}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        section, name, default = SCHEMA[key]
        sections[section][name] = _parse_value(key, value, default)
    try:
        return RunConfig(TrainConfig(**sections["train"]), DataSection(**sections["data"]),
                         **sections["run"])
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))


def format_config(cfg: RunConfig) -> str:
    lines = []
    for key, (section, name, _) in SCHEMA.items():
        src = cfg.train if section == "train" else cfg.data if section == "data" else cfg
        lines.append(f"{key} = {_format_value(getattr(src, name))}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> int:
    """64-bit fingerprint of everything except the seed (which may be overridden on resume)."""
    text = format_config(dataclasses.replace(cfg, train=cfg.train.replace(seed=0)))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def help_text() -> str:
    rows = [f"  {key:28s} default {_format_value(default)!s}" for key, (_, _, default) in SCHEMA.items()]
    return "config keys:\n" + "\n".join(rows)
