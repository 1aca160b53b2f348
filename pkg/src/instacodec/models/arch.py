"""Layer listings, presets, and parameter initialization for the SSF-style codec."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import Tensor

AUTOENCODERS = ("iframe", "flow", "residual")
SENDER_MODULES = ("g_a", "h_a")
RECEIVER_MODULES = ("g_s", "h_s_mu", "h_s_sigma", "prior")

# per-autoencoder (input channels, output channels)
AE_IO = {"iframe": (3, 3), "flow": (6, 3), "residual": (3, 3)}

SIGMA_BIAS_INIT = 1.0
FLOW_SCALE_BIAS_INIT = -4.0
FLOW_OUTPUT_GAIN = 0.1


@dataclass(frozen=True)
class ArchConfig:
    codec_channels: int
    hypercodec_channels: int
    latent_channels: int
    hyperlatent_channels: int

    def __post_init__(self):
        for name in ("codec_channels", "hypercodec_channels", "latent_channels", "hyperlatent_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def downsample_factor(self) -> int:
        return 64

    @property
    def channels(self) -> tuple[int, int, int, int]:
        return (self.codec_channels, self.hypercodec_channels, self.latent_channels, self.hyperlatent_channels)


PRESETS = {
    "ssf-lite": ArchConfig(32, 32, 48, 48),
    "ssf18": ArchConfig(128, 192, 192, 192),
    "ssf8": ArchConfig(96, 96, 192, 192),
    "ssf5": ArchConfig(64, 64, 192, 192),
    "ssf3": ArchConfig(48, 48, 128, 192),
}
# stable ids for the bitstream header; 255 marks a custom channel layout
PRESET_IDS = {"ssf-lite": 0, "ssf18": 1, "ssf8": 2, "ssf5": 3, "ssf3": 4}
CUSTOM_PRESET_ID = 255


def preset_name(config: ArchConfig) -> str | None:
    for name, cfg in PRESETS.items():
        if cfg == config:
            return name
    return None


@dataclass(frozen=True)
class LayerSpec:
    name: str  # e.g. "iframe.g_s.2"
    transposed: bool
    cin: int
    cout: int
    kernel: int
    stride: int

    @property
    def padding(self) -> int:
        return self.kernel // 2

    @property
    def output_padding(self) -> int:
        return self.stride - 1 if self.transposed else 0

    @property
    def param_count(self) -> int:
        return self.cin * self.cout * self.kernel**2 + self.cout

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        if self.transposed:
            return (self.cin, self.cout, self.kernel, self.kernel)
        return (self.cout, self.cin, self.kernel, self.kernel)


def module_layers(config: ArchConfig, ae: str, module: str) -> list[LayerSpec]:
    c, h, y, z = config.channels
    cin, cout = AE_IO[ae]

    def stack(specs, transposed):
        return [LayerSpec(f"{ae}.{module}.{i}", transposed, *s) for i, s in enumerate(specs)]

    if module == "g_a":
        return stack([(cin, c, 5, 2), (c, c, 5, 2), (c, c, 5, 2), (c, y, 5, 2)], False)
    if module == "g_s":
        return stack([(y, c, 5, 2), (c, c, 5, 2), (c, c, 5, 2), (c, cout, 5, 2)], True)
    if module == "h_a":
        return stack([(y, h, 3, 1), (h, h, 5, 2), (h, z, 5, 2)], False)
    if module in ("h_s_mu", "h_s_sigma"):
        return stack([(z, h, 5, 2), (h, h, 5, 2), (h, y, 3, 1)], True)
    raise KeyError(module)


def all_layers(config: ArchConfig) -> list[LayerSpec]:
    out = []
    for ae in AUTOENCODERS:
        for module in ("g_a", "h_a", "h_s_mu", "h_s_sigma", "g_s"):
            out.extend(module_layers(config, ae, module))
    return out


def param_shapes(config: ArchConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in declaration order."""
    shapes: dict[str, tuple[int, ...]] = {}
    for ae in AUTOENCODERS:
        for module in ("g_a", "h_a", "h_s_mu", "h_s_sigma", "g_s"):
            for layer in module_layers(config, ae, module):
                shapes[f"{layer.name}.weight"] = layer.weight_shape
                shapes[f"{layer.name}.bias"] = (layer.cout,)
        shapes[f"{ae}.prior.loc"] = (config.hyperlatent_channels,)
        shapes[f"{ae}.prior.log_scale"] = (config.hyperlatent_channels,)
    return shapes


def is_receiver_param(name: str) -> bool:
    return name.split(".")[1] in RECEIVER_MODULES


class SsfModel:
    """Channel configuration plus a flat ``name -> Tensor`` parameter mapping."""

    def __init__(self, config: ArchConfig, params: dict[str, Tensor]):
        missing = set(param_shapes(config)) - set(params)
        if missing:
            raise KeyError(f"model is missing parameters: {sorted(missing)[:3]}")
        self.config = config
        self.params = params

    def receiver_names(self) -> list[str]:
        return [n for n in self.params if is_receiver_param(n)]

    def sender_names(self) -> list[str]:
        return [n for n in self.params if not is_receiver_param(n)]

    def receiver_size(self) -> int:
        return sum(self.params[n].data.size for n in self.receiver_names())

    def with_params(self, overrides: dict[str, Tensor]) -> SsfModel:
        merged = dict(self.params)
        merged.update(overrides)
        return SsfModel(self.config, merged)

    def copy(self) -> SsfModel:
        return SsfModel(self.config, {n: Tensor(p.data.copy(), name=n) for n, p in self.params.items()})

    def trainable(self) -> SsfModel:
        """A detached copy whose parameters all require gradients."""
        return SsfModel(
            self.config, {n: Tensor(p.data.copy(), requires_grad=True, name=n) for n, p in self.params.items()}
        )


def build_model(config: ArchConfig, rng_seed: int) -> SsfModel:
    """He-uniform weights, zero biases; a few biases are set so the untrained model behaves sensibly."""
    rng = np.random.default_rng(rng_seed)
    params: dict[str, Tensor] = {}
    specs = {layer.name: layer for layer in all_layers(config)}
    for name, shape in param_shapes(config).items():
        layer_name, kind = name.rsplit(".", 1)
        if kind == "weight":
            layer = specs[layer_name]
            fan_in = layer.cin * layer.kernel**2 / (layer.stride**2 if layer.transposed else 1)
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
            if layer_name == "flow.g_s.3":
                data *= FLOW_OUTPUT_GAIN  # start near the identity warp
        else:
            data = np.zeros(shape)
            if layer_name.endswith("h_s_sigma.2"):
                data[:] = SIGMA_BIAS_INIT
            elif layer_name == "flow.g_s.3":
                data[2] = FLOW_SCALE_BIAS_INIT
        params[name] = Tensor(data, name=name)
    return SsfModel(config, params)
