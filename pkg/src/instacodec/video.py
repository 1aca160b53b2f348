"""Raw video ingestion (Y4M, PPM frame directories), PPM output, and padding."""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

PAD_MULTIPLE = 64

# BT.709 full range
KR, KB = 0.2126, 0.0722
KG = 1.0 - KR - KB
CR_TO_R = 2 * (1 - KR)  # 1.5748
CB_TO_B = 2 * (1 - KB)  # 1.8556
CB_TO_G = -2 * (1 - KB) * KB / KG  # -0.18733
CR_TO_G = -2 * (1 - KR) * KR / KG  # -0.46812

_CHROMA_420 = {"420", "420jpeg", "420paldv", "420mpeg2"}
_CHROMA_444 = {"444"}


class VideoFormatError(ValueError):
    pass


@dataclass
class VideoClip:
    """Frames as float32 RGB in [0, 1], shape (frames, 3, height, width)."""

    frames: np.ndarray
    fps: Fraction = Fraction(30)

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise VideoFormatError(f"expected (frames, 3, h, w), got {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[2]

    @property
    def width(self) -> int:
        return self.frames.shape[3]

    def subsample(self, k: int) -> VideoClip:
        if k < 1:
            raise ValueError(f"subsample factor must be >= 1, got {k}")
        return VideoClip(self.frames[::k].copy(), self.fps / k)


def yuv_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """8-bit full-range planes (equal size) to RGB in [0, 1], channels first."""
    y = y.astype(np.float64) / 255.0
    cb = (u.astype(np.float64) - 128.0) / 255.0
    cr = (v.astype(np.float64) - 128.0) / 255.0
    r = y + CR_TO_R * cr
    g = y + CB_TO_G * cb + CR_TO_G * cr
    b = y + CB_TO_B * cb
    return np.clip(np.stack([r, g, b]), 0.0, 1.0).astype(np.float32)


def rgb_to_yuv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = (rgb[i].astype(np.float64) for i in range(3))
    y = KR * r + KG * g + KB * b
    cb = (b - y) / CB_TO_B
    cr = (r - y) / CR_TO_R

    def to8(x):
        return np.clip(np.floor(x * 255.0 + 0.5), 0, 255).astype(np.uint8)

    return to8(y), to8(cb + 128 / 255), to8(cr + 128 / 255)


def read_y4m(path: str | Path) -> VideoClip:
    data = Path(path).read_bytes()
    end = data.find(b"\n")
    if not data.startswith(b"YUV4MPEG2") or end < 0:
        raise VideoFormatError(f"{path}: not a YUV4MPEG2 file")
    params = data[9:end].decode("ascii").split()
    width = height = None
    fps = Fraction(30)
    chroma = "420jpeg"
    for token in params:
        tag, value = token[0], token[1:]
        if tag == "W":
            width = int(value)
        elif tag == "H":
            height = int(value)
        elif tag == "F":
            num, den = value.split(":")
            fps = Fraction(int(num), int(den))
        elif tag == "C":
            chroma = value
    if not width or not height:
        raise VideoFormatError(f"{path}: missing frame dimensions")
    if chroma in _CHROMA_420:
        cw, ch = (width + 1) // 2, (height + 1) // 2
    elif chroma in _CHROMA_444:
        cw, ch = width, height
    else:
        raise VideoFormatError(f"{path}: unsupported colorspace tag C{chroma}")
    frame_size = width * height + 2 * cw * ch
    frames = []
    pos = end + 1
    while pos < len(data):
        line_end = data.find(b"\n", pos)
        if not data.startswith(b"FRAME", pos) or line_end < 0:
            raise VideoFormatError(f"{path}: bad frame marker at byte {pos}")
        pos = line_end + 1
        if pos + frame_size > len(data):
            raise VideoFormatError(f"{path}: truncated frame {len(frames)}")
        buf = np.frombuffer(data, np.uint8, frame_size, pos)
        pos += frame_size
        y = buf[: width * height].reshape(height, width)
        u = buf[width * height : width * height + cw * ch].reshape(ch, cw)
        v = buf[width * height + cw * ch :].reshape(ch, cw)
        if (cw, ch) != (width, height):
            # nearest-neighbour chroma upsampling
            u = u.repeat(2, axis=0).repeat(2, axis=1)[:height, :width]
            v = v.repeat(2, axis=0).repeat(2, axis=1)[:height, :width]
        frames.append(yuv_to_rgb(y, u, v))
    if not frames:
        raise VideoFormatError(f"{path}: no frames found")
    return VideoClip(np.stack(frames), fps)


def write_y4m(clip: VideoClip, path: str | Path) -> None:
    """Write 8-bit 4:4:4 full-range Y4M."""
    fps = clip.fps
    header = f"YUV4MPEG2 W{clip.width} H{clip.height} F{fps.numerator}:{fps.denominator} Ip A1:1 C444 XCOLORRANGE=FULL\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for frame in clip.frames:
            f.write(b"FRAME\n")
            for plane in rgb_to_yuv(frame):
                f.write(plane.tobytes())


_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PPM_HEADER.match(data)
    if not m:
        raise VideoFormatError(f"{path}: not a binary PPM (P6) file")
    width, height, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise VideoFormatError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = width * height * 3
    if len(data) - m.end() < count * dtype.itemsize:
        raise VideoFormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(data, dtype, count, m.end()).reshape(height, width, 3)
    return (pixels.astype(np.float32) / maxval).transpose(2, 0, 1).copy()


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """(3, h, w) float in [0, 1] to (h, w, 3) bytes, rounding half up."""
    return np.clip(np.floor(frame.astype(np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(frame: np.ndarray, path: str | Path) -> None:
    pixels = to_uint8(frame)
    h, w, _ = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_frame_dir(path: str | Path) -> VideoClip:
    files = sorted(Path(path).glob("*.ppm"))
    if not files:
        raise VideoFormatError(f"{path}: no frames found")
    frames = [read_ppm(f) for f in files]
    shape = frames[0].shape
    for f, frame in zip(files, frames):
        if frame.shape != shape:
            raise VideoFormatError(f"{f.name}: dimensions {frame.shape[1:]} differ from first frame {shape[1:]}")
    return VideoClip(np.stack(frames))


def write_frame_dir(frames: np.ndarray, path: str | Path) -> list[Path]:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(frames):
        name = out / f"frame_{i:05d}.ppm"
        write_ppm(frame, name)
        names.append(name)
    return names


def ingest_video(path: str | Path, fmt: str | None = None) -> VideoClip:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file or directory")
    if fmt is None:
        fmt = "frame_dir" if path.is_dir() else "y4m"
    if fmt == "y4m":
        return read_y4m(path)
    if fmt == "frame_dir":
        return read_frame_dir(path)
    raise ValueError(f"unknown video format {fmt!r}")


def pad_to_multiple(frames: np.ndarray, m: int = PAD_MULTIPLE) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the last two axes on the bottom/right to multiples of ``m``."""
    h, w = frames.shape[-2:]
    ph, pw = -h % m, -w % m
    if ph == 0 and pw == 0:
        return frames, (h, w)
    out = frames
    for axis, (size, extra) in enumerate(((h, ph), (w, pw)), start=frames.ndim - 2):
        widths = [(0, 0)] * frames.ndim
        widths[axis] = (0, extra)
        out = np.pad(out, widths, mode="reflect" if size > 1 else "edge")
    return out, (h, w)


def crop(frames: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    return frames[..., :h, :w]
