"""Latent coding with an escape slot: in-range symbols through the range coder,
out-of-range ones as an escape followed by a signed Exp-Golomb remainder."""

from __future__ import annotations

import numpy as np

from .bits import BitReader, BitWriter, exp_golomb_decode, exp_golomb_encode
from .rangecoder import CorruptStreamError, decode_rows, encode_rows


def _rows(freqs: np.ndarray, count: int, tail_bound: int) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=np.int64)
    if freqs.ndim == 1:
        freqs = np.broadcast_to(freqs, (count, freqs.size))
    if freqs.shape != (count, 2 * tail_bound + 2):
        raise ValueError(f"expected frequency rows of shape {(count, 2 * tail_bound + 2)}, got {freqs.shape}")
    return freqs


def encode_latents_with_escape(symbols, freqs: np.ndarray, tail_bound: int) -> bytes:
    """Code integer ``symbols`` losslessly.

    ``freqs`` holds one row per symbol (or one shared row) covering ``-tail_bound ..
    tail_bound`` followed by the escape slot.
    """
    if tail_bound <= 0:
        raise ValueError("tail_bound must be positive")
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    rows = _rows(freqs, sym.size, tail_bound)
    escape = np.abs(sym) > tail_bound
    slots = np.where(escape, 2 * tail_bound + 1, sym + tail_bound)
    enc = encode_rows(slots, rows)
    head = enc.finish()
    writer = BitWriter()
    for k in sym[escape].tolist():
        # the remainder past the bound, signed; maps the two tails onto all integers
        exp_golomb_encode(k - tail_bound - 1 if k > 0 else k + tail_bound, writer)
    return head + writer.getvalue()


def decode_latents_with_escape(data: bytes, freqs: np.ndarray, tail_bound: int, count: int) -> np.ndarray:
    rows = _rows(freqs, count, tail_bound)
    slots, used = decode_rows(data, rows)
    sym = slots - tail_bound
    escape = slots == 2 * tail_bound + 1
    reader = BitReader(data[used:])
    try:
        for i in np.nonzero(escape)[0].tolist():
            v = exp_golomb_decode(reader)
            sym[i] = v + tail_bound + 1 if v >= 0 else v - tail_bound
    except EOFError as exc:
        raise CorruptStreamError(f"escape section truncated: {exc}") from exc
    if (reader.pos + 7) // 8 != len(data) - used:
        raise CorruptStreamError(f"{len(data) - used - (reader.pos + 7) // 8} unexpected trailing bytes")
    return sym
