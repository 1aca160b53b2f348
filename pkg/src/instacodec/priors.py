"""Spike-and-slab update prior, update quantization grid, and discretized latent PMFs.

All integer frequency tables built here are what the range coder consumes, so
everything is computed in float64 from float32-representable inputs; sender and
receiver run the same code on the same inputs and get identical tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr, ndtri

from . import tensor as T
from .tensor import Tensor

PRECISION_BITS = 16
PMF_TOTAL = 1 << PRECISION_BITS
SIGMA_FLOOR = 0.11
MAX_TAIL_BOUND = 1024
TAIL_MASS = 2.0**-16

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class SpikeSlabPrior:
    """Zero-mean mixture of a wide slab (std ``sigma``) and a narrow spike (std ``s``) weighted ``alpha``."""

    sigma: float = 0.05
    s: float = 0.001 / 6
    alpha: float = 100.0

    def __post_init__(self):
        # values travel as f32 in the bitstream; both ends must see the same numbers
        object.__setattr__(self, "sigma", _f32(self.sigma))
        object.__setattr__(self, "s", _f32(self.s))
        object.__setattr__(self, "alpha", _f32(self.alpha))
        if not 0 < self.s < self.sigma:
            raise ValueError(f"need 0 < s < sigma, got s={self.s}, sigma={self.sigma}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (ndtr(x / self.sigma) + self.alpha * ndtr(x / self.s)) / (1 + self.alpha)

    def sf(self, x):
        """Upper tail 1 - cdf(x), accurate for large x."""
        x = np.asarray(x, dtype=np.float64)
        return (ndtr(-x / self.sigma) + self.alpha * ndtr(-x / self.s)) / (1 + self.alpha)

    def mass_within(self, half_width: float) -> float:
        return float(1.0 - 2.0 * self.sf(half_width))


def spike_slab_density(delta, prior: SpikeSlabPrior):
    """Mixture density (N(d|0, sigma^2) + alpha N(d|0, s^2)) / (1 + alpha)."""
    d = np.asarray(delta, dtype=np.float64)
    slab = np.exp(-0.5 * (d / prior.sigma) ** 2) / (prior.sigma * math.sqrt(2 * math.pi))
    spike = np.exp(-0.5 * (d / prior.s) ** 2) / (prior.s * math.sqrt(2 * math.pi))
    out = (slab + prior.alpha * spike) / (1 + prior.alpha)
    return float(out) if out.ndim == 0 else out


def _neg_log_density(d: np.ndarray, prior: SpikeSlabPrior):
    """Return (-log p(d), d/dd of it), both float64, via log-sum-exp."""
    log_slab = -0.5 * (d / prior.sigma) ** 2 - math.log(prior.sigma) - _LOG_SQRT_2PI
    log_spike = math.log(prior.alpha) - 0.5 * (d / prior.s) ** 2 - math.log(prior.s) - _LOG_SQRT_2PI
    lse = np.logaddexp(log_slab, log_spike)
    nll = math.log1p(prior.alpha) - lse
    w_slab = np.exp(log_slab - lse)
    w_spike = np.exp(log_spike - lse)
    grad = d * (w_slab / prior.sigma**2 + w_spike / prior.s**2)
    return nll, grad


def update_rate_term(delta: Tensor, prior: SpikeSlabPrior) -> Tensor:
    """Sum of -log p(delta_j) in nats over the unquantized updates; differentiable."""
    d = delta.data.astype(np.float64)
    nll, grad = _neg_log_density(d, prior)
    total = np.asarray(nll.sum(), dtype=np.float64)
    return T.make_op(total, (delta,), lambda g: ((g * grad).astype(delta.dtype),))


# ---------------------------------------------------------------------------
# update grid


@dataclass(frozen=True)
class UpdateQuantGrid:
    t: float
    epsilon: float
    n_bins: int

    @property
    def half_count(self) -> int:
        return (self.n_bins - 1) // 2

    @property
    def half_width(self) -> float:
        return self.n_bins * self.t / 2

    @property
    def epsilon_exponent(self) -> int:
        e = -math.log2(self.epsilon)
        if abs(e - round(e)) > 1e-12:
            raise ValueError(f"epsilon {self.epsilon} is not a power of two")
        return int(round(e))


def build_update_grid(prior: SpikeSlabPrior, t: float, epsilon: float) -> UpdateQuantGrid:
    """Smallest odd bin count whose span [-n t / 2, n t / 2] carries prior mass >= 1 - epsilon."""
    if not t > 0:
        raise ValueError(f"bin width must be positive, got {t}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    t = _f32(t)
    target = 1.0 - epsilon

    def covers(half_count: int) -> bool:
        return prior.mass_within((2 * half_count + 1) * t / 2) >= target

    if covers(0):
        return UpdateQuantGrid(t=t, epsilon=float(epsilon), n_bins=1)
    hi = 1
    while not covers(hi):
        hi *= 2
        if hi > 1 << 24:
            raise ValueError("update grid does not converge; check prior and epsilon")
    lo = hi // 2 if hi > 1 else 0  # lo fails, hi covers
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if covers(mid):
            hi = mid
        else:
            lo = mid
    return UpdateQuantGrid(t=t, epsilon=float(epsilon), n_bins=2 * hi + 1)


def quantize_updates(delta, grid: UpdateQuantGrid) -> np.ndarray:
    """Integer symbols ``clamp(round(delta / t), +-half_count)``."""
    d = np.asarray(delta, dtype=np.float64) / grid.t
    sym = T.round_half_away(d)
    return np.clip(sym, -grid.half_count, grid.half_count).astype(np.int64)


def dequantize_updates(symbols, grid: UpdateQuantGrid) -> np.ndarray:
    return np.asarray(symbols, dtype=np.float64) * grid.t


def ste_quantize_updates(delta: Tensor, grid: UpdateQuantGrid) -> Tensor:
    """Quantize-dequantize in the forward pass, identity gradient."""
    out = dequantize_updates(quantize_updates(delta.data, grid), grid).astype(delta.dtype)
    return T.make_op(out, (delta,), lambda g: (g,))


# ---------------------------------------------------------------------------
# PMF tables


@dataclass(frozen=True)
class PmfTable:
    """Integer frequencies over consecutive symbols ``offset .. offset + len - 1`` summing to ``total``."""

    freqs: np.ndarray
    offset: int = 0
    total: int = PMF_TOTAL

    def __post_init__(self):
        freqs = np.ascontiguousarray(self.freqs, dtype=np.int64)
        object.__setattr__(self, "freqs", freqs)
        if freqs.ndim != 1 or freqs.size == 0:
            raise ValueError("PmfTable needs a non-empty 1-D frequency array")
        if freqs.min() < 1:
            raise ValueError("PmfTable entries must be >= 1")
        if int(freqs.sum()) != self.total:
            raise ValueError(f"PmfTable sums to {int(freqs.sum())}, expected {self.total}")

    def __len__(self) -> int:
        return self.freqs.size

    @property
    def cdf(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.freqs)])

    def probabilities(self) -> np.ndarray:
        return self.freqs / self.total

    def contains(self, symbol: int) -> bool:
        return 0 <= symbol - self.offset < self.freqs.size

    def bits(self, symbols) -> float:
        """Cross-entropy in bits of ``symbols`` under this table."""
        idx = np.asarray(symbols, dtype=np.int64) - self.offset
        return float(-np.log2(self.freqs[idx] / self.total).sum())


def quantize_pmf(probs, total: int = PMF_TOTAL) -> np.ndarray:
    """Integer frequencies from probabilities (last axis): floor, lift to >= 1, largest-remainder fix-up."""
    p = np.array(probs, dtype=np.float64, ndmin=1)
    squeeze = p.ndim == 1
    p = p.reshape(-1, p.shape[-1])
    k = p.shape[1]
    if k > total:
        raise ValueError(f"{k} symbols do not fit a total of {total}")
    p = np.maximum(p, 0.0)
    p /= p.sum(axis=1, keepdims=True)
    scaled = p * total
    freq = np.floor(scaled).astype(np.int64)
    rem = scaled - freq
    lifted = freq < 1
    freq[lifted] = 1
    rem[lifted] = -1.0
    diff = total - freq.sum(axis=1)
    order = np.argsort(-rem, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(k), order.shape), axis=1)
    freq += (rank < np.maximum(diff, 0)[:, None]).astype(np.int64)
    diff = total - freq.sum(axis=1)
    rows = np.nonzero(diff < 0)[0]
    while rows.size:
        sub = freq[rows]
        j = np.argmax(sub, axis=1)
        take = np.minimum(-diff[rows], sub[np.arange(rows.size), j] - 1)
        freq[rows, j] -= take
        diff = total - freq.sum(axis=1)
        rows = np.nonzero(diff < 0)[0]
    return freq[0] if squeeze else freq


def spike_slab_bin_probs(grid: UpdateQuantGrid, prior: SpikeSlabPrior) -> np.ndarray:
    """Float bin masses for symbols ``-half .. half``; extreme bins absorb the tails."""
    return _symmetric_bin_probs(prior.sf, grid)


def _symmetric_bin_probs(sf, grid: UpdateQuantGrid) -> np.ndarray:
    h = grid.half_count
    if h == 0:
        return np.ones(1)
    lower_edges = (np.arange(1, h + 1) - 0.5) * grid.t
    above = sf(lower_edges)  # mass above the lower edge of bins 1..h
    pos = above - np.append(above[1:], 0.0)
    center = 1.0 - 2.0 * above[0]
    return np.concatenate([pos[::-1], [center], pos])


def spike_slab_bin_pmf(grid: UpdateQuantGrid, prior: SpikeSlabPrior) -> PmfTable:
    freqs = quantize_pmf(spike_slab_bin_probs(grid, prior))
    return PmfTable(freqs, offset=-grid.half_count)


def gaussian_slab_bin_pmf(grid: UpdateQuantGrid, sigma: float) -> PmfTable:
    """A single zero-mean Gaussian of std ``sigma`` discretized on the update grid (reference for sparsity)."""
    probs = _symmetric_bin_probs(lambda x: ndtr(-np.asarray(x) / sigma), grid)
    return PmfTable(quantize_pmf(probs), offset=-grid.half_count)


# ---------------------------------------------------------------------------
# latent PMFs


def gaussian_bin_pmf(mu, sigma, k):
    """P(round(y) = k) for y ~ N(mu, sigma^2): Phi((k + 1/2 - mu)/sigma) - Phi((k - 1/2 - mu)/sigma)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    v = np.abs(np.asarray(k, dtype=np.float64) - mu)
    out = ndtr((0.5 - v) / sigma) - ndtr((-0.5 - v) / sigma)
    return float(out) if np.ndim(out) == 0 else out


def logistic_bin_pmf(loc, scale, k):
    """Discretized logistic mass of the unit bin around integer ``k``."""
    loc = np.asarray(loc, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    v = np.abs(np.asarray(k, dtype=np.float64) - loc)
    out = expit((0.5 - v) / scale) - expit((-0.5 - v) / scale)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_tail_bound(mu: np.ndarray, sigma: np.ndarray) -> int:
    """Per-tensor in-range limit: the 1 - 2^-16 quantile at the largest sigma, beyond the largest |mu|."""
    if mu.size == 0:
        return 1
    z = float(ndtri(1.0 - TAIL_MASS))
    bound = math.ceil(float(np.max(np.abs(mu))) + z * float(np.max(sigma)))
    return int(min(max(bound, 1), MAX_TAIL_BOUND))


def logistic_tail_bound(loc: np.ndarray, scale: np.ndarray) -> int:
    if loc.size == 0:
        return 1
    z = math.log((1.0 - TAIL_MASS) / TAIL_MASS)
    bound = math.ceil(float(np.max(np.abs(loc))) + z * float(np.max(scale)))
    return int(min(max(bound, 1), MAX_TAIL_BOUND))


def _with_escape(in_range: np.ndarray) -> np.ndarray:
    tail = np.clip(1.0 - in_range.sum(axis=1, keepdims=True), 0.0, None)
    return quantize_pmf(np.concatenate([in_range, tail], axis=1))


def gaussian_latent_freqs(mu: np.ndarray, sigma: np.ndarray, tail_bound: int) -> np.ndarray:
    """Rows of frequencies for symbols ``-B .. B`` plus a final escape slot, one row per element."""
    k = np.arange(-tail_bound, tail_bound + 1, dtype=np.float64)
    probs = gaussian_bin_pmf(mu.reshape(-1, 1), sigma.reshape(-1, 1), k[None, :])
    return _with_escape(np.atleast_2d(probs))


def logistic_latent_freqs(loc: np.ndarray, scale: np.ndarray, tail_bound: int) -> np.ndarray:
    k = np.arange(-tail_bound, tail_bound + 1, dtype=np.float64)
    probs = logistic_bin_pmf(loc.reshape(-1, 1), scale.reshape(-1, 1), k[None, :])
    return _with_escape(np.atleast_2d(probs))
