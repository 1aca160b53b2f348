"""Procedural test clips: analytically rendered textures under constant sub-pixel motion."""

from __future__ import annotations

import numpy as np

from .video import VideoClip

KINDS = ("blobs", "stripes", "checker")


def _blobs(rng, n=6):
    centers = rng.uniform(0, 1, (n, 2))
    radii = rng.uniform(0.08, 0.25, n)
    colors = rng.uniform(0, 1, (n, 3))
    base = rng.uniform(0.2, 0.8, 3)
    tilt = rng.uniform(-0.3, 0.3, (2, 3))

    def render(u, v):
        img = base[:, None, None] + tilt[0][:, None, None] * u + tilt[1][:, None, None] * v
        for (cx, cy), r, col in zip(centers, radii, colors):
            # periodic distance so content keeps entering from the border
            dx = (u - cx + 0.5) % 1.0 - 0.5
            dy = (v - cy + 0.5) % 1.0 - 0.5
            w = np.exp(-(dx * dx + dy * dy) / (2 * r * r))
            img = img * (1 - 0.7 * w) + 0.7 * w * col[:, None, None]
        return img

    return render


def _stripes(rng, n=3):
    freqs = rng.uniform(2, 7, n)
    angles = rng.uniform(0, np.pi, n)
    phases = rng.uniform(0, 2 * np.pi, n)
    colors = rng.uniform(-0.25, 0.25, (n, 3))
    base = rng.uniform(0.3, 0.7, 3)

    def render(u, v):
        img = np.broadcast_to(base[:, None, None], (3,) + u.shape).copy()
        for f, a, p, col in zip(freqs, angles, phases, colors):
            wave = np.sin(2 * np.pi * f * (u * np.cos(a) + v * np.sin(a)) + p)
            img += col[:, None, None] * wave
        return img

    return render


def _checker(rng):
    cells = int(rng.integers(3, 7))
    a, b = rng.uniform(0, 1, (2, 3))
    soft = 0.08

    def render(u, v):
        s = np.sin(2 * np.pi * cells * u / 2) * np.sin(2 * np.pi * cells * v / 2)
        w = 0.5 + 0.5 * np.tanh(s / soft)
        return a[:, None, None] * w + b[:, None, None] * (1 - w)

    return render


def make_clip(kind: str = "blobs", frames: int = 16, size: int | tuple[int, int] = 64, seed: int = 0) -> VideoClip:
    """``frames`` frames of one texture translating at a random, constant velocity."""
    if kind not in KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {KINDS}")
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng([seed, KINDS.index(kind)])
    render = {"blobs": _blobs, "stripes": _stripes, "checker": _checker}[kind](rng)
    speed = rng.uniform(0.5, 2.5)
    heading = rng.uniform(0, 2 * np.pi)
    vx, vy = speed * np.cos(heading), speed * np.sin(heading)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    scale = max(h, w)
    out = np.empty((frames, 3, h, w), np.float32)
    for t in range(frames):
        u = (xs - vx * t) / scale
        v = (ys - vy * t) / scale
        out[t] = np.clip(render(u, v), 0, 1)
    return VideoClip(out)
