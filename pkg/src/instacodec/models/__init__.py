from .arch import PRESETS, ArchConfig, SsfModel, build_model, param_shapes
from .gop import GopEntry, gop_plan
from .macs import count_decoder_macs
from .ssf import FrameResult, NonFiniteError, iframe_forward, pframe_forward, pframe_reconstruct
from .warp import BLUR_SIGMAS, BlurVolume, blur_stack, scale_space_warp

__all__ = [
    "PRESETS",
    "ArchConfig",
    "SsfModel",
    "build_model",
    "param_shapes",
    "GopEntry",
    "gop_plan",
    "count_decoder_macs",
    "FrameResult",
    "NonFiniteError",
    "iframe_forward",
    "pframe_forward",
    "pframe_reconstruct",
    "BLUR_SIGMAS",
    "BlurVolume",
    "blur_stack",
    "scale_space_warp",
]
