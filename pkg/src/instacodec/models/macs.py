"""Multiply-accumulate accounting for the receiver-side networks."""

from __future__ import annotations

from .arch import ArchConfig, LayerSpec, module_layers

AMORTIZE_GOP = 12


def layer_macs(layer: LayerSpec, out_h: int, out_w: int) -> int:
    # transposed convolutions are counted per output pixel, like ordinary ones
    return out_h * out_w * layer.cin * layer.cout * layer.kernel**2


def _stack_macs(layers: list[LayerSpec], in_h: int, in_w: int) -> tuple[int, int, int]:
    total = 0
    h, w = in_h, in_w
    for layer in layers:
        if layer.transposed:
            h, w = h * layer.stride, w * layer.stride
        else:
            h, w = -(-h // layer.stride), -(-w // layer.stride)
        total += layer_macs(layer, h, w)
    return total, h, w


def autoencoder_receiver_macs(config: ArchConfig, ae: str, width: int, height: int) -> int:
    lh, lw = height // 16, width // 16
    zh, zw = lh // 4, lw // 4
    total = _stack_macs(module_layers(config, ae, "g_s"), lh, lw)[0]
    for branch in ("h_s_mu", "h_s_sigma"):
        total += _stack_macs(module_layers(config, ae, branch), zh, zw)[0]
    return total


def count_decoder_macs(config: ArchConfig, width: int, height: int) -> float:
    """kMACs per pixel: one P-frame plus the I-frame share at a GoP of 12."""
    if width % 64 or height % 64:
        raise ValueError(f"dimensions must be multiples of 64, got {width}x{height}")
    i_frame = autoencoder_receiver_macs(config, "iframe", width, height)
    p_frame = autoencoder_receiver_macs(config, "flow", width, height) + autoencoder_receiver_macs(
        config, "residual", width, height
    )
    per_frame = (i_frame + (AMORTIZE_GOP - 1) * p_frame) / AMORTIZE_GOP
    return per_frame / (width * height * 1000)
