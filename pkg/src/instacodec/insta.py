"""Rate-distortion losses and instance-adaptive finetuning.

Receiver-side parameters are finetuned as updates ``delta`` on top of the
global model: the forward pass sees ``theta_D + quantize(delta)`` (with a
straight-through gradient), while the update penalty is evaluated on the raw
``delta``. Sender-side parameters are finetuned directly since they never
leave the encoder.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .models.arch import SsfModel
from .models.ssf import NonFiniteError, iframe_forward, pframe_forward
from .optim import OptimizerState, adam_step
from .priors import (
    SpikeSlabPrior,
    UpdateQuantGrid,
    quantize_updates,
    spike_slab_bin_pmf,
    ste_quantize_updates,
    update_rate_term,
)
from .tensor import Tensor

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# losses


def rd_loss(recons, targets, latent_rate_nats: Tensor, beta: float) -> Tensor:
    """beta * (latent nats per pixel) + per-pixel MSE, both averaged over the frames."""
    if len(recons) != len(targets) or not recons:
        raise ValueError(f"{len(recons)} reconstructions for {len(targets)} targets")
    n = len(recons)
    pixels = n * targets[0].shape[-2] * targets[0].shape[-1] * targets[0].shape[0]
    mse = T.sum_all(T.mean(T.square(T.sub(r, t))) for r, t in zip(recons, targets))
    distortion = T.mul(mse, 1.0 / n)
    rate = T.mul(latent_rate_nats, beta / pixels)
    return T.add(rate, distortion)


def insta_loss(rd: Tensor, r_theta_nats: Tensor, beta: float, num_pixels: int = 1) -> Tensor:
    """rd + beta * R_theta, with R_theta spread over ``num_pixels`` like the latent rate."""
    return T.add(rd, T.mul(r_theta_nats, beta / num_pixels))


def window_forward(model: SsfModel, frames: list[Tensor], mode: str, seed: int = 0) -> tuple[list[Tensor], Tensor]:
    """Code ``frames`` as I, P, P, ...; returns reconstructions and the summed latent rate (nats)."""
    recons = []
    rates = []
    prev = None
    for i, frame in enumerate(frames):
        res = iframe_forward(frame, model, mode, seed, i) if prev is None else pframe_forward(prev, frame, model, mode, seed, i)
        recons.append(res.recon)
        rates.append(res.rate_nats)
        prev = res.recon
    return recons, T.sum_all(rates)


def gop_windows(num_frames: int, length: int) -> list[int]:
    """Start indices of the aligned windows ``[s, s + length)`` that fit the clip."""
    if num_frames <= length:
        return [0]
    return list(range(0, num_frames - length + 1, length))


# ---------------------------------------------------------------------------
# update plumbing


def flatten(arrays: dict[str, np.ndarray], names: list[str]) -> np.ndarray:
    if not names:
        return np.zeros(0, np.float32)
    return np.concatenate([np.asarray(arrays[n]).ravel() for n in names])


def unflatten(vector: np.ndarray, shapes: dict[str, tuple[int, ...]]) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        out[name] = vector[pos : pos + size].reshape(shape)
        pos += size
    if pos != vector.size:
        raise ValueError(f"update vector has {vector.size} entries, model expects {pos}")
    return out


def apply_update_symbols(model: SsfModel, symbols: np.ndarray, grid: UpdateQuantGrid) -> SsfModel:
    """Receiver-side model ``theta_D + symbols * t`` in float32, exactly as the decoder forms it."""
    names = model.receiver_names()
    shapes = {n: model.params[n].shape for n in names}
    per_tensor = unflatten(np.asarray(symbols, np.int64), shapes)
    updated = {}
    for name in names:
        step = (per_tensor[name] * np.float64(grid.t)).astype(np.float32)
        updated[name] = Tensor(model.params[name].data + step, name=name)
    return model.with_params(updated)


def update_bits(symbols: np.ndarray, prior: SpikeSlabPrior, grid: UpdateQuantGrid) -> float:
    """Ideal code length of the quantized updates under the coder's table."""
    return spike_slab_bin_pmf(grid, prior).bits(symbols)


# ---------------------------------------------------------------------------
# finetuning


@dataclass(frozen=True)
class FinetuneConfig:
    beta: float = 0.0004
    lr: float = 1e-5
    max_steps: int = 200
    checkpoint_every: int = 25
    train_gop: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.train_gop < 2:
            raise ValueError(f"train_gop must be >= 2 to learn P-frames, got {self.train_gop}")
        if self.max_steps < 0 or self.checkpoint_every < 1:
            raise ValueError("max_steps must be >= 0 and checkpoint_every >= 1")


@dataclass(frozen=True)
class Checkpoint:
    step: int
    rd_loss: float
    r_theta_bits: float
    total_loss: float
    seconds: float


@dataclass
class FinetuneReport:
    checkpoints: list[Checkpoint] = field(default_factory=list)
    diverged: bool = False

    COLUMNS = ("step", "rd_loss", "r_theta_bits", "total_loss", "seconds")

    def best_so_far(self) -> list[float]:
        out, best = [], math.inf
        for c in self.checkpoints:
            best = min(best, c.total_loss)
            out.append(best)
        return out

    def best(self) -> Checkpoint:
        return min(self.checkpoints, key=lambda c: (c.total_loss, c.step))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.COLUMNS)
            for c in self.checkpoints:
                writer.writerow([c.step, repr(c.rd_loss), repr(c.r_theta_bits), repr(c.total_loss), f"{c.seconds:.3f}"])


@dataclass
class FinetuneResult:
    update_symbols: np.ndarray  # int64, receiver parameters in declaration order
    sender_params: dict[str, np.ndarray]
    report: FinetuneReport

    def model(self, global_model: SsfModel, grid: UpdateQuantGrid) -> SsfModel:
        """The finetuned model as the encoder uses it (sender params plus quantized receiver updates)."""
        sender = {n: Tensor(a, name=n) for n, a in self.sender_params.items()}
        return apply_update_symbols(global_model, self.update_symbols, grid).with_params(sender)


def evaluate_clip(model: SsfModel, frames: np.ndarray, beta: float, train_gop: int) -> float:
    """Eval-mode rd loss averaged over the aligned windows of the clip."""
    starts = gop_windows(frames.shape[0], train_gop)
    total = 0.0
    with T.no_grad():
        for s in starts:
            window = [Tensor(f[None]) for f in frames[s : s + train_gop]]
            recons, rate = window_forward(model, window, "eval")
            total += float(rd_loss(recons, window, rate, beta).data)
    return total / len(starts)


def _noise_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1, np.uint64)[0])


def _finetune(
    frames: np.ndarray,
    global_model: SsfModel,
    prior: SpikeSlabPrior,
    grid: UpdateQuantGrid,
    cfg: FinetuneConfig,
    train_updates: bool,
) -> FinetuneResult:
    if frames.ndim != 4 or frames.shape[0] < 1:
        raise ValueError(f"expected frames (n, 3, h, w), got {frames.shape}")
    recv_names = global_model.receiver_names()
    send_names = global_model.sender_names()
    num_pixels = frames.shape[0] * frames.shape[2] * frames.shape[3]
    delta = {n: Tensor(np.zeros(global_model.params[n].shape, np.float32), requires_grad=True, name=n) for n in recv_names}
    phi = {n: Tensor(global_model.params[n].data.copy(), requires_grad=True, name=n) for n in send_names}
    theta = {n: global_model.params[n] for n in recv_names}
    trainable = {**phi, **({f"delta:{n}": d for n, d in delta.items()} if train_updates else {})}
    opt = OptimizerState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    starts = gop_windows(frames.shape[0], cfg.train_gop)
    table = spike_slab_bin_pmf(grid, prior)

    report = FinetuneReport()
    best_total = math.inf
    best_state = None
    t0 = time.perf_counter()

    def snapshot():
        syms = quantize_updates(flatten({n: d.data for n, d in delta.items()}, recv_names), grid)
        return syms, {n: p.data.copy() for n, p in phi.items()}

    for step in range(cfg.max_steps + 1):
        if step % cfg.checkpoint_every == 0 or step == cfg.max_steps:
            syms, sender = snapshot()
            model = apply_update_symbols(global_model, syms, grid).with_params(
                {n: Tensor(a, name=n) for n, a in sender.items()}
            )
            try:
                rd = evaluate_clip(model, frames, cfg.beta, cfg.train_gop)
            except NonFiniteError:
                rd = math.nan
            bits = table.bits(syms) if train_updates else 0.0
            total = rd + cfg.beta * bits * LN2 / num_pixels
            if not math.isfinite(total):
                report.diverged = True
                break
            report.checkpoints.append(Checkpoint(step, rd, bits, total, time.perf_counter() - t0))
            if total < best_total:
                best_total = total
                best_state = (syms, sender)
        if step == cfg.max_steps:
            break

        s = starts[int(rng.integers(len(starts)))]
        window = [Tensor(f[None]) for f in frames[s : s + cfg.train_gop]]
        params = dict(phi)
        for n in recv_names:
            params[n] = T.add(theta[n], ste_quantize_updates(delta[n], grid)) if train_updates else theta[n]
        model = global_model.with_params(params)
        try:
            recons, rate = window_forward(model, window, "train", _noise_seed(cfg.seed, step))
        except NonFiniteError:
            report.diverged = True
            break
        loss = rd_loss(recons, window, rate, cfg.beta)
        if train_updates:
            r_theta = T.sum_all(update_rate_term(delta[n], prior) for n in recv_names)
            loss = insta_loss(loss, r_theta, cfg.beta, num_pixels)
        if not np.isfinite(loss.data):
            report.diverged = True
            break
        T.backward(loss)
        # a one-frame clip never reaches the P-frame encoders
        adam_step({k: v for k, v in trainable.items() if v.grad is not None}, opt)

    if best_state is None:
        zeros = np.zeros(sum(theta[n].data.size for n in recv_names), np.int64)
        best_state = (zeros, {n: global_model.params[n].data.copy() for n in send_names})
    return FinetuneResult(best_state[0], best_state[1], report)


def finetune_instance(
    frames: np.ndarray, global_model: SsfModel, prior: SpikeSlabPrior, grid: UpdateQuantGrid, cfg: FinetuneConfig
) -> FinetuneResult:
    """Finetune receiver updates and sender parameters on one clip; returns the best checkpoint."""
    return _finetune(frames, global_model, prior, grid, cfg, train_updates=True)


def encoder_only_finetune(
    frames: np.ndarray, global_model: SsfModel, prior: SpikeSlabPrior, grid: UpdateQuantGrid, cfg: FinetuneConfig
) -> FinetuneResult:
    """Same loop with the receiver frozen; the update vector stays zero and is never transmitted."""
    return _finetune(frames, global_model, prior, grid, cfg, train_updates=False)
