"""Plain-text ``key = value`` run configuration.

Defaults::

    arch = ssf-lite           beta = 0.0004       gop_size = 12 (inf for one GoP)
    max_steps = 200           checkpoint_every = 25
    lr = 1e-5                 seed = 0            train_gop = 3
    t = 0.001                 sigma = 0.05        s = t / 6
    alpha = 100               epsilon = 0.00390625 (2^-8)
    subsample = 1
    train_steps = 500         train_iframe_steps = 0
    train_batch = 1           train_lr = 1e-3

Blank lines and ``#`` comments are ignored; unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .codec import CodecSettings
from .insta import FinetuneConfig
from .models.arch import PRESETS, ArchConfig
from .priors import SpikeSlabPrior
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _gop(value: str) -> int:
    if value.strip().lower() in ("inf", "infinite", "0"):
        return 0
    n = int(value)
    if n < 1:
        raise ValueError(f"gop_size must be >= 1 or inf, got {n}")
    return n


@dataclass(frozen=True)
class RunConfig:
    arch: str = "ssf-lite"
    beta: float = 0.0004
    gop_size: int = 12  # 0 = infinite
    max_steps: int = 200
    checkpoint_every: int = 25
    lr: float = 1e-5
    seed: int = 0
    train_gop: int = 3
    t: float = 0.001
    sigma: float = 0.05
    s: float | None = None  # None = t / 6
    alpha: float = 100.0
    epsilon: float = 2.0**-8
    subsample: int = 1
    train_steps: int = 500
    train_iframe_steps: int = 0
    train_batch: int = 1
    train_lr: float = 1e-3

    def __post_init__(self):
        if self.arch not in PRESETS:
            raise ConfigError(f"unknown arch {self.arch!r}; choose from {sorted(PRESETS)}")
        if self.subsample < 1:
            raise ConfigError(f"subsample must be >= 1, got {self.subsample}")

    @property
    def arch_config(self) -> ArchConfig:
        return PRESETS[self.arch]

    @property
    def prior(self) -> SpikeSlabPrior:
        return SpikeSlabPrior(self.sigma, self.t / 6 if self.s is None else self.s, self.alpha)

    @property
    def finetune(self) -> FinetuneConfig:
        return FinetuneConfig(self.beta, self.lr, self.max_steps, self.checkpoint_every, self.train_gop, self.seed)

    @property
    def training(self) -> TrainConfig:
        return TrainConfig(
            self.beta, self.train_lr, self.train_steps, self.train_gop, self.train_batch, self.train_iframe_steps, self.seed
        )

    def codec_settings(self, mode: str) -> CodecSettings:
        return CodecSettings(mode, self.gop_size, self.finetune, self.prior, self.t, self.epsilon)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


_PARSERS = {
    "arch": str,
    "beta": float,
    "gop_size": _gop,
    "max_steps": int,
    "checkpoint_every": int,
    "lr": float,
    "seed": int,
    "train_gop": int,
    "t": float,
    "sigma": float,
    "s": float,
    "alpha": float,
    "epsilon": float,
    "subsample": int,
    "train_steps": int,
    "train_iframe_steps": int,
    "train_batch": int,
    "train_lr": float,
}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
        if isinstance(parsed, float) and not math.isfinite(parsed):
            raise ConfigError(f"{source}:{lineno}: {key} must be finite")
        values[key] = parsed
    try:
        config = RunConfig(**values)
        # surface range errors from the derived objects now rather than mid-run
        config.prior, config.finetune, config.training  # noqa: B018
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: {exc}") from exc
    return config


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such config file")
    return parse_config(path.read_text(), str(path))
