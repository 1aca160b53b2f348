"""Gaussian blur stack and scale-space warping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import tensor as T
from ..tensor import ShapeError, Tensor

BLUR_SIGMAS = (0.0, 1.0, 2.0, 4.0, 8.0)


def blur_sigmas(levels: int) -> tuple[float, ...]:
    if levels < 2:
        raise ValueError(f"blur stack needs at least 2 levels, got {levels}")
    return (0.0,) + tuple(2.0 ** (level - 1) for level in range(1, levels))


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    """Mirror indices into [0, n) without repeating the edge sample (any number of bounces)."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


@lru_cache(maxsize=64)
def blur_matrix(n: int, sigma: float) -> np.ndarray:
    """(n, n) matrix applying the 1-D reflect-padded Gaussian along one axis."""
    kernel = gaussian_kernel(sigma)
    radius = kernel.size // 2
    rows = np.repeat(np.arange(n), kernel.size)
    cols = _reflect(rows + np.tile(np.arange(-radius, radius + 1), n), n)
    m = np.zeros((n, n))
    np.add.at(m, (rows, cols), np.tile(kernel, n))
    return m.astype(np.float32)


@dataclass
class BlurVolume:
    """``volume`` has shape (n, levels, c, h, w); level 0 is the source frame."""

    volume: Tensor
    sigmas: tuple[float, ...]

    @property
    def levels(self) -> int:
        return len(self.sigmas)

    def level(self, index: int) -> np.ndarray:
        return self.volume.data[:, index]


def blur_stack(frame: Tensor, levels: int = len(BLUR_SIGMAS)) -> BlurVolume:
    sigmas = blur_sigmas(levels)
    if frame.data.ndim != 4:
        raise ShapeError(f"blur_stack expects (n, c, h, w), got {frame.shape}")
    _, _, h, w = frame.shape
    mats = [(blur_matrix(h, s), blur_matrix(w, s)) for s in sigmas[1:]]
    x = frame.data
    out = [x] + [np.matmul(np.matmul(bh, x), bw.T) for bh, bw in mats]
    vol = np.stack(out, axis=1)

    def backward(g):
        gx = g[:, 0].copy()
        for i, (bh, bw) in enumerate(mats, start=1):
            gx += np.matmul(np.matmul(bh.T, g[:, i]), bw)
        return (gx,)

    return BlurVolume(T.make_op(vol, (frame,), backward), sigmas)


def _trilinear(volume: Tensor, field: Tensor) -> Tensor:
    vol = volume.data
    n, levels, c, h, w = vol.shape
    fd = field.data
    ys, xs = np.meshgrid(np.arange(h, dtype=vol.dtype), np.arange(w, dtype=vol.dtype), indexing="ij")
    px_raw = xs + fd[:, 0]
    py_raw = ys + fd[:, 1]
    ps_raw = fd[:, 2]
    px = np.clip(px_raw, 0, w - 1)
    py = np.clip(py_raw, 0, h - 1)
    ps = np.clip(ps_raw, 0, levels - 1)
    x0 = np.minimum(np.floor(px).astype(np.int64), w - 2) if w > 1 else np.zeros(px.shape, np.int64)
    y0 = np.minimum(np.floor(py).astype(np.int64), h - 2) if h > 1 else np.zeros(py.shape, np.int64)
    s0 = np.minimum(np.floor(ps).astype(np.int64), levels - 2)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    s1 = s0 + 1
    wx = (px - x0).astype(vol.dtype)
    wy = (py - y0).astype(vol.dtype)
    ws = (ps - s0).astype(vol.dtype)

    b = np.arange(n)[:, None, None]
    corners = []
    for si, fs in ((s0, 1 - ws), (s1, ws)):
        for yi, fy in ((y0, 1 - wy), (y1, wy)):
            for xi, fx in ((x0, 1 - wx), (x1, wx)):
                corners.append((si, yi, xi, fs, fy, fx))

    def gather(si, yi, xi):
        # vol[b, si, :, yi, xi] -> (n, h, w, c) then channels first
        return np.moveaxis(vol[b, si, :, yi, xi], -1, 1)

    out = np.zeros((n, c, h, w), dtype=vol.dtype)
    for si, yi, xi, fs, fy, fx in corners:
        out += (fs * fy * fx)[:, None] * gather(si, yi, xi)

    inside_x = (px_raw >= 0) & (px_raw <= w - 1)
    inside_y = (py_raw >= 0) & (py_raw <= h - 1)
    inside_s = (ps_raw >= 0) & (ps_raw <= levels - 1)

    def backward(g):
        gvol = None
        if volume.requires_grad:
            gvol = np.zeros_like(vol)
            gl = np.moveaxis(g, 1, -1)  # n, h, w, c
            bb = np.broadcast_to(b, x0.shape)
            for si, yi, xi, fs, fy, fx in corners:
                np.add.at(gvol, (bb, si, slice(None), yi, xi), (fs * fy * fx)[..., None] * gl)
        gfield = None
        if field.requires_grad:
            gx = np.zeros((n, h, w), dtype=np.float64)
            gy = np.zeros_like(gx)
            gs = np.zeros_like(gx)
            for si, yi, xi, fs, fy, fx in corners:
                v = (gather(si, yi, xi) * g).sum(axis=1)
                sx = 1.0 if xi is x1 else -1.0
                sy = 1.0 if yi is y1 else -1.0
                ss = 1.0 if si is s1 else -1.0
                gx += sx * fs * fy * v
                gy += sy * fs * fx * v
                gs += ss * fy * fx * v
            gfield = np.stack([gx * inside_x, gy * inside_y, gs * inside_s], axis=1).astype(field.dtype)
        return gvol, gfield

    return T.make_op(out, (volume, field), backward)


def scale_space_warp(frame: Tensor, field: Tensor, levels: int = len(BLUR_SIGMAS)) -> Tensor:
    """Sample the blur stack of ``frame`` at (x + dx, y + dy, s) with border clamping."""
    if field.data.ndim != 4 or field.shape[1] != 3:
        raise ShapeError(f"warp field must have 3 channels (dx, dy, scale), got shape {field.shape}")
    if field.shape[0] != frame.shape[0] or field.shape[2:] != frame.shape[2:]:
        raise ShapeError(f"warp field {field.shape} does not match frame {frame.shape}")
    return _trilinear(blur_stack(frame, levels).volume, field)
