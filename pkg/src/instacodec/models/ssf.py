"""I-frame and P-frame forward passes over a flat parameter mapping.

The sender half (``g_a``, ``h_a`` and rounding) maps inputs to integer symbols;
the receiver half (:func:`synthesise`, :func:`latent_params`,
:func:`pframe_reconstruct`) depends only on symbols and receiver-side
parameters. Encoder and decoder call the very same receiver
functions, which is what makes reconstructions bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..priors import SIGMA_FLOOR
from ..tensor import Tensor
from .arch import SsfModel, module_layers
from .rates import gaussian_rate_nats, logistic_rate_nats
from .warp import BLUR_SIGMAS, scale_space_warp

LN2 = math.log(2.0)
MODES = ("train", "eval")

# noise streams per autoencoder: latent y and hyperlatent z get distinct Philox streams
_STREAMS = {"iframe": 0, "flow": 2, "residual": 4}


class NonFiniteError(FloatingPointError):
    pass


def _check(x: Tensor, where: str) -> Tensor:
    if not np.isfinite(x.data).all():
        raise NonFiniteError(f"non-finite activation after {where}")
    return x


def run_module(model: SsfModel, ae: str, module: str, x: Tensor) -> Tensor:
    layers = module_layers(model.config, ae, module)
    p = model.params
    for i, layer in enumerate(layers):
        w, b = p[f"{layer.name}.weight"], p[f"{layer.name}.bias"]
        if layer.transposed:
            x = T.conv_transpose2d(x, w, b, layer.stride, layer.padding, layer.output_padding)
        else:
            x = T.conv2d(x, w, b, layer.stride, layer.padding)
        _check(x, layer.name)  # before relu, which would map nan to 0
        if i < len(layers) - 1:
            x = T.relu(x)
    if module == "h_s_sigma":
        x = T.clamp_min(T.relu(x), SIGMA_FLOOR)
    return x


def latent_params(model: SsfModel, ae: str, z_hat: Tensor) -> tuple[Tensor, Tensor]:
    """Gaussian mean and std of the latent given the (rounded) hyperlatent."""
    return run_module(model, ae, "h_s_mu", z_hat), run_module(model, ae, "h_s_sigma", z_hat)


def hyper_prior(model: SsfModel, ae: str) -> tuple[Tensor, Tensor]:
    return model.params[f"{ae}.prior.loc"], model.params[f"{ae}.prior.log_scale"]


def synthesise(model: SsfModel, ae: str, y_hat: Tensor) -> Tensor:
    return run_module(model, ae, "g_s", y_hat)


@dataclass
class AeResult:
    recon: Tensor  # decoder output (frame, residual, or raw flow)
    y_symbols: np.ndarray
    z_symbols: np.ndarray
    rate_nats: Tensor  # differentiable

    @property
    def rate_bits(self) -> float:
        return float(self.rate_nats.data) / LN2


def autoencode(model: SsfModel, ae: str, x: Tensor, mode: str, seed: int = 0, stream: int = 0) -> AeResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    y = run_module(model, ae, "g_a", x)
    z = run_module(model, ae, "h_a", y)
    base = 8 * stream + _STREAMS[ae]
    if mode == "train":
        y_rate = T.add_uniform_noise(y, seed, base)
        z_rate = T.add_uniform_noise(z, seed, base + 1)
        z_hat = T.ste_round(z)
        y_hat = T.ste_round(y)
    else:
        y_hat = Tensor(T.round_half_away(y.data))
        z_hat = Tensor(T.round_half_away(z.data))
        y_rate, z_rate = y_hat, z_hat
    mu, sigma = latent_params(model, ae, z_hat)
    loc, log_scale = hyper_prior(model, ae)
    rate = T.add(logistic_rate_nats(z_rate, loc, log_scale), gaussian_rate_nats(y_rate, mu, sigma))
    recon = synthesise(model, ae, y_hat)
    return AeResult(recon, y_hat.data.astype(np.int64), z_hat.data.astype(np.int64), rate)


@dataclass
class FrameResult:
    recon: Tensor
    parts: dict[str, AeResult] = field(default_factory=dict)

    @property
    def rate_nats(self) -> Tensor:
        return T.sum_all(part.rate_nats for part in self.parts.values())

    @property
    def rate_bits(self) -> float:
        return sum(part.rate_bits for part in self.parts.values())

    def symbols(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(part.y_symbols, part.z_symbols) for part in self.parts.values()]


def iframe_forward(frame: Tensor, model: SsfModel, mode: str = "eval", seed: int = 0, stream: int = 0) -> FrameResult:
    res = autoencode(model, "iframe", frame, mode, seed, stream)
    return FrameResult(res.recon, {"iframe": res})


def flow_field(raw: Tensor, levels: int = len(BLUR_SIGMAS)) -> Tensor:
    """Map the flow decoder output to (dx, dy, s) with s squashed into [0, levels - 1]."""
    disp = T.narrow(raw, 1, 0, 2)
    scale = T.mul(T.sigmoid(T.narrow(raw, 1, 2, 3)), float(levels - 1))
    return T.concat([disp, scale], axis=1)


def pframe_reconstruct(prev_recon: Tensor, flow_out: Tensor, residual_out: Tensor) -> tuple[Tensor, Tensor]:
    """Receiver-side combination: returns (recon, warped)."""
    warped = scale_space_warp(prev_recon, flow_field(flow_out))
    return T.add(warped, residual_out), warped


def pframe_forward(
    prev_recon: Tensor, frame: Tensor, model: SsfModel, mode: str = "eval", seed: int = 0, stream: int = 0
) -> FrameResult:
    if prev_recon.shape != frame.shape:
        raise T.ShapeError(f"reference {prev_recon.shape} and frame {frame.shape} differ")
    _check(prev_recon, "reference frame")
    flow = autoencode(model, "flow", T.concat([frame, prev_recon], axis=1), mode, seed, stream)
    warped = scale_space_warp(prev_recon, flow_field(flow.recon))
    residual = autoencode(model, "residual", T.sub(frame, warped), mode, seed, stream)
    recon = T.add(warped, residual.recon)
    return FrameResult(recon, {"flow": flow, "residual": residual})
