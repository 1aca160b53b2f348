from .bits import BitReader, BitWriter, exp_golomb_decode, exp_golomb_encode, zigzag, unzigzag
from .latents import decode_latents_with_escape, encode_latents_with_escape
from .rangecoder import CorruptStreamError, RangeDecoder, RangeEncoder, range_decode, range_encode

__all__ = [
    "BitReader",
    "BitWriter",
    "CorruptStreamError",
    "RangeDecoder",
    "RangeEncoder",
    "decode_latents_with_escape",
    "encode_latents_with_escape",
    "exp_golomb_decode",
    "exp_golomb_encode",
    "range_decode",
    "range_encode",
    "unzigzag",
    "zigzag",
]
