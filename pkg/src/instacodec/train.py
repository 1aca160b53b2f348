"""Global (dataset-level) training of the codec on short windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .insta import _noise_seed, rd_loss, window_forward
from .models.arch import ArchConfig, SsfModel, build_model
from .optim import OptimizerState, adam_step
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.0004
    lr: float = 1e-3
    steps: int = 500
    train_gop: int = 3
    batch_size: int = 1
    iframe_steps: int = 0  # warm-up on single frames before whole windows
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0 or not self.lr > 0:
            raise ValueError("beta and lr must be positive")
        if self.steps < 0 or self.iframe_steps < 0 or self.batch_size < 1 or self.train_gop < 1:
            raise ValueError("steps must be >= 0, batch_size and train_gop >= 1")


def _sample(clips, rng, batch: int, length: int) -> np.ndarray:
    """(length, batch, 3, h, w) windows from randomly chosen clips."""
    picks = []
    for _ in range(batch):
        clip = clips[int(rng.integers(len(clips)))]
        start = int(rng.integers(clip.shape[0] - length + 1))
        picks.append(clip[start : start + length])
    return np.stack(picks, axis=1)


def train_global(
    clips: list[np.ndarray], config: ArchConfig, cfg: TrainConfig, log_every: int = 0
) -> tuple[SsfModel, list[float]]:
    """Adam on random ``train_gop``-frame windows drawn across ``clips``; returns the model and per-step losses.

    The first ``cfg.iframe_steps`` steps see single frames only and update the
    I-frame autoencoder; the remaining ``cfg.steps`` train every parameter.
    """
    if not clips:
        raise ValueError("no training clips")
    for c in clips:
        if c.shape[0] < cfg.train_gop:
            raise ValueError(f"clip with {c.shape[0]} frames is shorter than the training window {cfg.train_gop}")
    if cfg.batch_size > 1 and len({c.shape[1:] for c in clips}) > 1:
        raise ValueError("batched training needs clips of equal frame size")
    model = build_model(config, cfg.seed).trainable()
    iframe_params = {n: p for n, p in model.params.items() if n.startswith("iframe.")}
    warm_opt = OptimizerState(lr=cfg.lr)
    opt = OptimizerState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for step in range(cfg.iframe_steps + cfg.steps):
        warm = step < cfg.iframe_steps
        batch = _sample(clips, rng, cfg.batch_size, 1 if warm else cfg.train_gop)
        window = [Tensor(f) for f in batch]
        recons, rate = window_forward(model, window, "train", _noise_seed(cfg.seed, step))
        loss = rd_loss(recons, window, rate, cfg.beta)
        T.backward(loss)
        if warm:
            adam_step(iframe_params, warm_opt)
            for p in model.params.values():
                p.grad = None
        else:
            adam_step(model.params, opt)
        losses.append(float(loss.data))
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}: rd_loss {np.mean(losses[-log_every:]):.6f}", flush=True)
    return model.copy(), losses
