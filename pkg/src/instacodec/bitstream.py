"""The ``.insa`` container and the ``.wts`` global-weights file.

Layout (little-endian)::

    header    magic "INSA", version u8, preset id u8, 4 x u16 channels,
              width u16, height u16, frames u32, gop u16, beta f32, flags u8
    update    (flag bit 0) sigma, s, alpha, t as f32, epsilon exponent u8,
              count u32, payload length u32, payload, CRC32(payload)
    frames    kind u8, then per latent stream: c, h, w u16, tail bound u16,
              payload length u32, payload
    trailer   CRC32 of every preceding byte

This module only moves bytes; what the payloads mean is up to :mod:`instacodec.codec`.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coding import CorruptStreamError
from .models.arch import CUSTOM_PRESET_ID, PRESET_IDS, PRESETS, ArchConfig, SsfModel, param_shapes, preset_name
from .tensor import Tensor

MAGIC = b"INSA"
VERSION = 1
FLAG_UPDATES = 0x01

WEIGHTS_MAGIC = b"INSW"
WEIGHTS_VERSION = 1

FRAME_I = 0
FRAME_P = 1
STREAMS_PER_KIND = {FRAME_I: 2, FRAME_P: 4}  # I: y, z; P: flow y, flow z, residual y, residual z

_HEADER = struct.Struct("<4sBB4HHHIHfB")
_UPDATE = struct.Struct("<4fBII")
_STREAM = struct.Struct("<4HI")
_CRC = struct.Struct("<I")

HEADER_SIZE = _HEADER.size


class BitstreamError(CorruptStreamError):
    """Any structural problem with a stream or weights file."""


class NotInsaStreamError(BitstreamError):
    pass


class UnsupportedVersionError(BitstreamError):
    pass


class ChecksumError(BitstreamError):
    pass


class TruncatedStreamError(BitstreamError):
    pass


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


@dataclass(frozen=True)
class BitstreamHeader:
    config: ArchConfig
    width: int
    height: int
    num_frames: int
    gop_size: int  # 0 = infinite
    beta: float
    has_updates: bool = False
    version: int = VERSION

    def __post_init__(self):
        object.__setattr__(self, "beta", float(np.float32(self.beta)))
        if self.width < 1 or self.height < 1:
            raise ValueError(f"frame dimensions must be >= 1, got {self.width}x{self.height}")
        if self.width > 0xFFFF or self.height > 0xFFFF or self.gop_size > 0xFFFF or self.gop_size < 0:
            raise ValueError("dimension or gop size out of u16 range")

    @property
    def preset_id(self) -> int:
        return PRESET_IDS.get(preset_name(self.config), CUSTOM_PRESET_ID)

    def pack(self) -> bytes:
        flags = FLAG_UPDATES if self.has_updates else 0
        return _HEADER.pack(
            MAGIC, self.version, self.preset_id, *self.config.channels,
            self.width, self.height, self.num_frames, self.gop_size, self.beta, flags,
        )  # fmt: skip


@dataclass(frozen=True)
class UpdateSection:
    sigma: float
    s: float
    alpha: float
    t: float
    epsilon_exponent: int
    count: int
    payload: bytes

    def __post_init__(self):
        for name in ("sigma", "s", "alpha", "t"):
            object.__setattr__(self, name, float(np.float32(getattr(self, name))))

    def pack(self) -> bytes:
        head = _UPDATE.pack(self.sigma, self.s, self.alpha, self.t, self.epsilon_exponent, self.count, len(self.payload))
        return head + self.payload + _CRC.pack(crc32(self.payload))

    @property
    def size(self) -> int:
        return _UPDATE.size + len(self.payload) + _CRC.size


@dataclass(frozen=True)
class LatentStream:
    shape: tuple[int, int, int]  # channels, height, width
    tail_bound: int
    payload: bytes

    def pack(self) -> bytes:
        return _STREAM.pack(*self.shape, self.tail_bound, len(self.payload)) + self.payload

    @property
    def size(self) -> int:
        return _STREAM.size + len(self.payload)


@dataclass(frozen=True)
class FrameSection:
    kind: int
    streams: tuple[LatentStream, ...]

    def __post_init__(self):
        expected = STREAMS_PER_KIND.get(self.kind)
        if expected is None:
            raise ValueError(f"unknown frame kind {self.kind}")
        if len(self.streams) != expected:
            raise ValueError(f"frame kind {self.kind} carries {expected} streams, got {len(self.streams)}")

    def pack(self) -> bytes:
        return bytes([self.kind]) + b"".join(s.pack() for s in self.streams)

    @property
    def size(self) -> int:
        return 1 + sum(s.size for s in self.streams)


@dataclass(frozen=True)
class Bitstream:
    header: BitstreamHeader
    update: UpdateSection | None = None
    frames: tuple[FrameSection, ...] = field(default_factory=tuple)

    def to_bytes(self) -> bytes:
        if self.header.has_updates != (self.update is not None):
            raise ValueError("header update flag disagrees with the update section")
        if self.header.num_frames != len(self.frames):
            raise ValueError(f"header announces {self.header.num_frames} frames, got {len(self.frames)}")
        body = self.header.pack()
        if self.update is not None:
            body += self.update.pack()
        body += b"".join(f.pack() for f in self.frames)
        return body + _CRC.pack(crc32(body))


def write_bitstream(stream: Bitstream, sink) -> int:
    """Write to a path or binary file object; returns the byte count."""
    data = stream.to_bytes()
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)
    return len(data)


class _Cursor:
    def __init__(self, data: bytes, end: int):
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedStreamError(f"stream truncated inside {what} at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: struct.Struct, what: str) -> tuple:
        return fmt.unpack(self.take(fmt.size, what))


def _config_from(preset_id: int, channels: tuple[int, int, int, int]) -> ArchConfig:
    for name, pid in PRESET_IDS.items():
        if pid == preset_id:
            config = PRESETS[name]
            if config.channels != channels:
                raise BitstreamError(f"channel counts {channels} contradict preset {name}")
            return config
    if preset_id != CUSTOM_PRESET_ID:
        raise BitstreamError(f"unknown architecture preset id {preset_id}")
    return ArchConfig(*channels)


def _check_magic(data: bytes) -> None:
    if len(data) < 5 or data[:4] != MAGIC:
        raise NotInsaStreamError("not an INSA stream")
    if data[4] != VERSION:
        raise UnsupportedVersionError(f"unsupported stream version {data[4]} (this reader handles version {VERSION})")


def read_header(data: bytes) -> BitstreamHeader:
    _check_magic(data)
    if len(data) < HEADER_SIZE:
        raise TruncatedStreamError(f"stream truncated inside header ({len(data)} of {HEADER_SIZE} bytes)")
    magic, version, preset_id, cm, ch, cmp_, chp, w, h, n, gop, beta, flags = _HEADER.unpack_from(data)
    if flags & ~FLAG_UPDATES:
        raise BitstreamError(f"unknown header flags {flags:#04x}")
    try:
        return BitstreamHeader(_config_from(preset_id, (cm, ch, cmp_, chp)), w, h, n, gop, beta, bool(flags & FLAG_UPDATES), version)
    except ValueError as exc:
        if isinstance(exc, BitstreamError):
            raise
        raise BitstreamError(f"invalid header: {exc}") from exc


def read_bitstream(data: bytes) -> Bitstream:
    """Parse and verify a complete stream; raises a :class:`BitstreamError` subclass on any defect."""
    data = bytes(data)
    header = read_header(data)
    if len(data) < HEADER_SIZE + _CRC.size:
        raise TruncatedStreamError("stream ends before its checksum")
    (stored,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if crc32(data[: -_CRC.size]) != stored:
        raise ChecksumError("stream CRC mismatch: the file is corrupted or truncated")
    cur = _Cursor(data, len(data) - _CRC.size)
    cur.pos = HEADER_SIZE
    update = None
    if header.has_updates:
        sigma, s, alpha, t, eps, count, length = cur.unpack(_UPDATE, "update section")
        payload = cur.take(length, "update payload")
        (pcrc,) = cur.unpack(_CRC, "update section")
        if crc32(payload) != pcrc:
            raise ChecksumError("update payload CRC mismatch")
        update = UpdateSection(sigma, s, alpha, t, eps, count, payload)
    frames = []
    for i in range(header.num_frames):
        (kind,) = cur.take(1, f"frame {i}")
        if kind not in STREAMS_PER_KIND:
            raise BitstreamError(f"frame {i}: unknown frame kind {kind}")
        streams = []
        for _ in range(STREAMS_PER_KIND[kind]):
            c, h, w, bound, length = cur.unpack(_STREAM, f"frame {i} stream header")
            streams.append(LatentStream((c, h, w), bound, cur.take(length, f"frame {i} payload")))
        frames.append(FrameSection(kind, tuple(streams)))
    if cur.pos != cur.end:
        raise BitstreamError(f"{cur.end - cur.pos} unexpected bytes after the last frame")
    return Bitstream(header, update, tuple(frames))


# ---------------------------------------------------------------------------
# global weights


_WEIGHTS_HEADER = struct.Struct("<4sBB4HI")


def weights_to_bytes(model: SsfModel) -> bytes:
    c = model.config
    pid = PRESET_IDS.get(preset_name(c), CUSTOM_PRESET_ID)
    shapes = param_shapes(c)
    body = _WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, pid, *c.channels, len(shapes))
    body += b"".join(np.ascontiguousarray(model.params[n].data, dtype="<f4").tobytes() for n in shapes)
    return body + _CRC.pack(crc32(body))


def weights_from_bytes(data: bytes) -> SsfModel:
    if len(data) < 5 or data[:4] != WEIGHTS_MAGIC:
        raise NotInsaStreamError("not an INSA weights file")
    if data[4] != WEIGHTS_VERSION:
        raise UnsupportedVersionError(f"unsupported weights version {data[4]}")
    if len(data) < _WEIGHTS_HEADER.size + _CRC.size:
        raise TruncatedStreamError("weights file truncated inside header")
    (stored,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if crc32(data[: -_CRC.size]) != stored:
        raise ChecksumError("weights file CRC mismatch")
    _, _, pid, *channels, count = _WEIGHTS_HEADER.unpack_from(data)
    config = _config_from(pid, tuple(channels))
    shapes = param_shapes(config)
    if count != len(shapes):
        raise BitstreamError(f"weights file lists {count} tensors, architecture has {len(shapes)}")
    expected = _WEIGHTS_HEADER.size + 4 * sum(int(np.prod(s)) for s in shapes.values()) + _CRC.size
    if len(data) != expected:
        raise TruncatedStreamError(f"weights file has {len(data)} bytes, expected {expected}")
    params = {}
    pos = _WEIGHTS_HEADER.size
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        arr = np.frombuffer(data, "<f4", size, pos).reshape(shape).astype(np.float32)
        params[name] = Tensor(arr, name=name)
        pos += 4 * size
    return SsfModel(config, params)


def save_weights(model: SsfModel, path: str | Path) -> int:
    data = weights_to_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def load_weights(path: str | Path) -> SsfModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such weights file")
    return weights_from_bytes(path.read_bytes())
