"""Rate-distortion metrics: PSNR, bpp, BD-rate, rate composition, update sparsity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .bitstream import FRAME_I, read_bitstream
from .priors import SpikeSlabPrior, UpdateQuantGrid, gaussian_slab_bin_pmf, spike_slab_bin_pmf


class NoOverlapError(ValueError):
    """Two RD curves share no PSNR range."""


def psnr_rgb(a: np.ndarray, b: np.ndarray) -> float:
    """Frame-averaged MSE over all RGB samples, then 10 log10(1 / MSE); ``inf`` for identical clips."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"clip shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    per_frame = ((a - b) ** 2).reshape(a.shape[0], -1).mean(axis=1)
    mse = float(per_frame.mean())
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def bpp(total_bits: float, frames: int, width: int, height: int) -> float:
    if frames < 1 or width < 1 or height < 1:
        raise ValueError("frames, width and height must be >= 1")
    return total_bits / (frames * width * height)


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr: float

    def __post_init__(self):
        if not self.bpp > 0:
            raise ValueError(f"bpp must be positive, got {self.bpp}")
        if not math.isfinite(self.psnr):
            raise ValueError(f"psnr must be finite, got {self.psnr}")


@dataclass(frozen=True)
class RDCurve:
    label: str
    points: tuple[RDPoint, ...]

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: p.bpp))
        if len(pts) < 2:
            raise ValueError(f"curve {self.label!r} needs at least 2 points")
        if any(b.bpp <= a.bpp for a, b in zip(pts, pts[1:])):
            raise ValueError(f"curve {self.label!r} has repeated bpp values")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_arrays(cls, label: str, rates, psnrs) -> RDCurve:
        return cls(label, tuple(RDPoint(float(r), float(p)) for r, p in zip(rates, psnrs)))

    @property
    def bpps(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([p.psnr for p in self.points])


def _log_rate_spline(curve: RDCurve) -> CubicSpline:
    order = np.argsort(curve.psnrs)
    x = curve.psnrs[order]
    if np.any(np.diff(x) <= 0):
        raise ValueError(f"curve {curve.label!r} has repeated PSNR values")
    return CubicSpline(x, np.log10(curve.bpps[order]), bc_type="natural")


def bd_rate(reference: RDCurve, test: RDCurve) -> float:
    """Average rate difference of ``test`` against ``reference`` in percent; negative means cheaper."""
    for c in (reference, test):
        if len(c.points) < 4:
            raise ValueError(f"curve {c.label!r} has {len(c.points)} points, BD-rate needs at least 4")
    lo = max(reference.psnrs.min(), test.psnrs.min())
    hi = min(reference.psnrs.max(), test.psnrs.max())
    if not hi > lo:
        raise NoOverlapError(
            f"PSNR ranges do not overlap: {reference.label} [{reference.psnrs.min():.3f}, {reference.psnrs.max():.3f}] dB, "
            f"{test.label} [{test.psnrs.min():.3f}, {test.psnrs.max():.3f}] dB"
        )
    area = _log_rate_spline(test).integrate(lo, hi) - _log_rate_spline(reference).integrate(lo, hi)
    return (10.0 ** (area / (hi - lo)) - 1.0) * 100.0


# ---------------------------------------------------------------------------
# CSV


def read_rd_csv(path: str | Path) -> dict[str, RDCurve]:
    """Curves from ``label,bpp,psnr`` rows, grouped by label in file order."""
    groups: dict[str, list[RDPoint]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"label", "bpp", "psnr"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns label,bpp,psnr")
        for row in reader:
            groups.setdefault(row["label"], []).append(RDPoint(float(row["bpp"]), float(row["psnr"])))
    if not groups:
        raise ValueError(f"{path}: no RD points")
    return {label: RDCurve(label, tuple(pts)) for label, pts in groups.items()}


def append_rd_point(path: str | Path, label: str, rate: float, psnr: float) -> None:
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if fresh:
            writer.writerow(["label", "bpp", "psnr"])
        writer.writerow([label, repr(float(rate)), repr(float(psnr))])


# ---------------------------------------------------------------------------
# rate composition


RATE_PARTS = ("model_updates", "iframe_latents", "pframe_flow", "pframe_residual")


@dataclass(frozen=True)
class RateReport:
    bits: dict[str, int]  # per part, section headers included
    overhead_bits: int  # stream header and trailing checksum

    @property
    def total_bits(self) -> int:
        return sum(self.bits.values()) + self.overhead_bits

    @property
    def fractions(self) -> dict[str, float]:
        total = sum(self.bits.values())
        if total == 0:
            return {k: 0.0 for k in RATE_PARTS}
        return {k: self.bits[k] / total for k in RATE_PARTS}


def rate_report(data: bytes) -> RateReport:
    """Split a stream's bits into update, I-frame, flow and residual parts."""
    stream = read_bitstream(data)
    bits = dict.fromkeys(RATE_PARTS, 0)
    if stream.update is not None:
        bits["model_updates"] = 8 * stream.update.size
    for frame in stream.frames:
        sizes = [8 * s.size for s in frame.streams]
        if frame.kind == FRAME_I:
            bits["iframe_latents"] += 8 + sum(sizes)
        else:
            bits["pframe_flow"] += 8 + sizes[0] + sizes[1]
            bits["pframe_residual"] += sizes[2] + sizes[3]
    return RateReport(bits, 8 * len(data) - sum(bits.values()))


# ---------------------------------------------------------------------------
# update sparsity


@dataclass(frozen=True)
class SparsityReport:
    count: int
    zero_fraction: float
    bits_spike_slab: float
    bits_gaussian: float

    @property
    def saving_per_param(self) -> float:
        return (self.bits_gaussian - self.bits_spike_slab) / self.count


def sparsity_report(symbols, prior: SpikeSlabPrior, grid: UpdateQuantGrid) -> SparsityReport:
    """Code length of the update symbols under the spike-slab table versus the slab alone."""
    sym = np.asarray(symbols, dtype=np.int64).ravel()
    if sym.size == 0:
        raise ValueError("no update symbols")
    return SparsityReport(
        count=int(sym.size),
        zero_fraction=float(np.mean(sym == 0)),
        bits_spike_slab=spike_slab_bin_pmf(grid, prior).bits(sym),
        bits_gaussian=gaussian_slab_bin_pmf(grid, prior.sigma).bits(sym),
    )
