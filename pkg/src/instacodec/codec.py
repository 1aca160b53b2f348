"""Clip-level encoder and decoder.

The encoder runs the sender-side networks to obtain integer symbols, then
rebuilds every reference frame through :func:`reconstruct_frame`, the same
function the decoder calls. Both sides therefore produce identical floats.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .bitstream import (
    FRAME_I,
    FRAME_P,
    Bitstream,
    BitstreamError,
    BitstreamHeader,
    FrameSection,
    LatentStream,
    UpdateSection,
    read_bitstream,
)
from .coding import CorruptStreamError, decode_latents_with_escape, encode_latents_with_escape, range_decode, range_encode
from .insta import (
    FinetuneConfig,
    FinetuneReport,
    apply_update_symbols,
    encoder_only_finetune,
    evaluate_clip,
    finetune_instance,
)
from .models.arch import SsfModel
from .models.gop import gop_plan
from .models.ssf import AeResult, iframe_forward, latent_params, pframe_forward, pframe_reconstruct, synthesise
from .priors import (
    SpikeSlabPrior,
    UpdateQuantGrid,
    build_update_grid,
    gaussian_latent_freqs,
    gaussian_tail_bound,
    logistic_latent_freqs,
    logistic_tail_bound,
    spike_slab_bin_pmf,
)
from .tensor import Tensor
from .video import crop, pad_to_multiple

MODES = ("insta", "encoder-only", "global")
LN2 = math.log(2.0)

# latent streams in stream order for each frame kind
FRAME_AES = {FRAME_I: ("iframe",), FRAME_P: ("flow", "residual")}


class WeightsMismatchError(ValueError):
    """The stream was produced with a different architecture than the supplied weights."""


@dataclass(frozen=True)
class CodecSettings:
    mode: str = "insta"
    gop_size: int = 0  # 0 = a single GoP
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    prior: SpikeSlabPrior = field(default_factory=SpikeSlabPrior)
    t: float = 0.001
    epsilon: float = 2.0**-8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gop_size < 0:
            raise ValueError(f"gop size must be >= 0, got {self.gop_size}")

    @property
    def grid(self) -> UpdateQuantGrid:
        return build_update_grid(self.prior, self.t, self.epsilon)


@dataclass
class EncodeResult:
    data: bytes
    recon: np.ndarray  # (frames, 3, h, w) float32, cropped to the source size
    report: FinetuneReport | None
    update_symbols: np.ndarray | None
    loss: float  # rd loss plus the update rate term, as the finetuning loop measures it

    @property
    def total_bits(self) -> int:
        return 8 * len(self.data)

    @property
    def bpp(self) -> float:
        n, _, h, w = self.recon.shape
        return self.total_bits / (n * h * w)


@dataclass
class DecodeResult:
    frames: np.ndarray
    header: BitstreamHeader
    update_seconds: float


# ---------------------------------------------------------------------------
# latent streams


def _symbols_tensor(symbols: np.ndarray) -> Tensor:
    return Tensor(np.asarray(symbols, dtype=np.float32))


def _hyper_table(model: SsfModel, ae: str, shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    loc = model.params[f"{ae}.prior.loc"].data.astype(np.float64).reshape(1, -1, 1, 1)
    scale = np.exp(model.params[f"{ae}.prior.log_scale"].data.astype(np.float64)).reshape(1, -1, 1, 1)
    return np.broadcast_to(loc, shape), np.broadcast_to(scale, shape)


def _latent_table(model: SsfModel, ae: str, z_symbols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu, sigma = latent_params(model, ae, _symbols_tensor(z_symbols))
    return mu.data.astype(np.float64), sigma.data.astype(np.float64)


def _encode_stream(symbols: np.ndarray, loc: np.ndarray, scale: np.ndarray, gaussian: bool) -> LatentStream:
    bound = (gaussian_tail_bound if gaussian else logistic_tail_bound)(loc, scale)
    freqs = (gaussian_latent_freqs if gaussian else logistic_latent_freqs)(loc, scale, bound)
    return LatentStream(tuple(symbols.shape[1:]), bound, encode_latents_with_escape(symbols, freqs, bound))


def _decode_stream(stream: LatentStream, loc: np.ndarray, scale: np.ndarray, gaussian: bool) -> np.ndarray:
    freqs = (gaussian_latent_freqs if gaussian else logistic_latent_freqs)(loc, scale, stream.tail_bound)
    count = int(np.prod(stream.shape))
    return decode_latents_with_escape(stream.payload, freqs, stream.tail_bound, count).reshape((1,) + stream.shape)


def encode_autoencoder(model: SsfModel, ae: str, res: AeResult) -> tuple[LatentStream, LatentStream]:
    """Entropy-code one autoencoder's symbols as (y stream, z stream)."""
    z_stream = _encode_stream(res.z_symbols, *_hyper_table(model, ae, res.z_symbols.shape), gaussian=False)
    y_stream = _encode_stream(res.y_symbols, *_latent_table(model, ae, res.z_symbols), gaussian=True)
    return y_stream, z_stream


def decode_autoencoder(model: SsfModel, ae: str, y_stream: LatentStream, z_stream: LatentStream) -> np.ndarray:
    """Recover the latent symbols ``y`` of one autoencoder."""
    z = _decode_stream(z_stream, *_hyper_table(model, ae, (1,) + z_stream.shape), gaussian=False)
    mu, sigma = _latent_table(model, ae, z)
    if mu.shape[1:] != y_stream.shape:
        raise BitstreamError(f"{ae}: latent stream shape {y_stream.shape} does not match the hyperprior {mu.shape[1:]}")
    return _decode_stream(y_stream, mu, sigma, gaussian=True)


def reconstruct_frame(model: SsfModel, kind: int, y_symbols: dict[str, np.ndarray], reference: Tensor | None) -> Tensor:
    """Receiver-side frame reconstruction from latent symbols; shared by encoder and decoder."""
    if kind == FRAME_I:
        return synthesise(model, "iframe", _symbols_tensor(y_symbols["iframe"]))
    if reference is None:
        raise BitstreamError("P-frame without a reference frame")
    flow_out = synthesise(model, "flow", _symbols_tensor(y_symbols["flow"]))
    residual_out = synthesise(model, "residual", _symbols_tensor(y_symbols["residual"]))
    recon, _ = pframe_reconstruct(reference, flow_out, residual_out)
    return recon


# ---------------------------------------------------------------------------
# update section


def encode_updates(symbols: np.ndarray, prior: SpikeSlabPrior, grid: UpdateQuantGrid) -> UpdateSection:
    payload = range_encode(np.asarray(symbols).ravel(), spike_slab_bin_pmf(grid, prior))
    return UpdateSection(prior.sigma, prior.s, prior.alpha, grid.t, grid.epsilon_exponent, int(symbols.size), payload)


def decode_updates(section: UpdateSection) -> tuple[np.ndarray, SpikeSlabPrior, UpdateQuantGrid]:
    try:
        prior = SpikeSlabPrior(section.sigma, section.s, section.alpha)
        grid = build_update_grid(prior, section.t, 2.0 ** -section.epsilon_exponent)
    except ValueError as exc:
        raise BitstreamError(f"invalid update prior parameters: {exc}") from exc
    symbols = range_decode(section.payload, spike_slab_bin_pmf(grid, prior), section.count)
    return np.asarray(symbols, dtype=np.int64), prior, grid


# ---------------------------------------------------------------------------
# clip level


def _code_frames(model: SsfModel, frames: np.ndarray, gop_size: int) -> tuple[list[FrameSection], np.ndarray]:
    sections = []
    recons = np.empty_like(frames)
    reference = None
    with T.no_grad():
        for entry in gop_plan(frames.shape[0], gop_size):
            x = Tensor(frames[entry.index][None])
            if entry.kind == "I":
                kind = FRAME_I
                result = iframe_forward(x, model, "eval")
            else:
                kind = FRAME_P
                result = pframe_forward(reference, x, model, "eval")
            streams = []
            for ae in FRAME_AES[kind]:
                streams.extend(encode_autoencoder(model, ae, result.parts[ae]))
            sections.append(FrameSection(kind, tuple(streams)))
            y_symbols = {ae: result.parts[ae].y_symbols for ae in FRAME_AES[kind]}
            reference = reconstruct_frame(model, kind, y_symbols, reference)
            recons[entry.index] = reference.data[0]
    return sections, recons


def encode_clip(frames: np.ndarray, global_model: SsfModel, settings: CodecSettings | None = None) -> EncodeResult:
    """Encode ``frames`` (n, 3, h, w) in [0, 1] with the selected mode."""
    settings = settings or CodecSettings()
    if frames.ndim != 4 or frames.shape[1] != 3 or frames.shape[0] < 1:
        raise ValueError(f"expected frames (n, 3, h, w), got {frames.shape}")
    padded, size = pad_to_multiple(np.asarray(frames, dtype=np.float32))
    cfg = settings.finetune
    grid = settings.grid
    report = None
    symbols = None
    model = global_model
    if settings.mode == "global":
        loss = evaluate_clip(global_model, padded, cfg.beta, cfg.train_gop)
    else:
        run = finetune_instance if settings.mode == "insta" else encoder_only_finetune
        result = run(padded, global_model, settings.prior, grid, cfg)
        report = result.report
        model = result.model(global_model, grid)
        loss = report.best().total_loss if report.checkpoints else math.nan
        if settings.mode == "insta":
            symbols = result.update_symbols
    sections, recons = _code_frames(model, padded, settings.gop_size)
    header = BitstreamHeader(
        global_model.config, size[1], size[0], frames.shape[0], settings.gop_size, cfg.beta, symbols is not None
    )
    update = encode_updates(symbols, settings.prior, grid) if symbols is not None else None
    data = Bitstream(header, update, tuple(sections)).to_bytes()
    return EncodeResult(data, np.ascontiguousarray(crop(recons, size)), report, symbols, loss)


def decode_stream(data: bytes, global_model: SsfModel) -> DecodeResult:
    """Decode a complete ``.insa`` stream with the out-of-band global model."""
    stream = read_bitstream(data)
    header = stream.header
    if header.config != global_model.config:
        raise WeightsMismatchError(
            f"stream expects architecture {header.config.channels}, weights have {global_model.config.channels}"
        )
    t0 = time.perf_counter()
    model = global_model
    if stream.update is not None:
        symbols, _, grid = decode_updates(stream.update)
        if symbols.size != global_model.receiver_size():
            raise BitstreamError(f"update section has {symbols.size} parameters, model has {global_model.receiver_size()}")
        model = apply_update_symbols(global_model, symbols, grid)
    update_seconds = time.perf_counter() - t0

    f = global_model.config.downsample_factor
    ph, pw = -(-header.height // f) * f, -(-header.width // f) * f
    plan = gop_plan(header.num_frames, header.gop_size)
    out = np.empty((header.num_frames, 3, ph, pw), np.float32)
    reference = None
    with T.no_grad():
        for entry, section in zip(plan, stream.frames):
            expected = FRAME_I if entry.kind == "I" else FRAME_P
            if section.kind != expected:
                raise BitstreamError(f"frame {entry.index}: kind {section.kind} breaks the GoP plan")
            y_symbols = {}
            for i, ae in enumerate(FRAME_AES[section.kind]):
                y_stream, z_stream = section.streams[2 * i], section.streams[2 * i + 1]
                try:
                    y_symbols[ae] = decode_autoencoder(model, ae, y_stream, z_stream)
                except (ValueError, T.ShapeError) as exc:
                    if isinstance(exc, CorruptStreamError):
                        raise
                    raise BitstreamError(f"frame {entry.index}: {exc}") from exc
            reference = reconstruct_frame(model, section.kind, y_symbols, reference)
            if reference.shape != (1, 3, ph, pw):
                raise BitstreamError(f"frame {entry.index}: decoded size {reference.shape[2:]} != {(ph, pw)}")
            out[entry.index] = reference.data[0]
    return DecodeResult(np.ascontiguousarray(crop(out, (header.height, header.width))), header, update_seconds)
