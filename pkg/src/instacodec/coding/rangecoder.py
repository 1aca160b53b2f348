"""Byte-oriented range coder with carry propagation over static frequency tables.

The coder state is 64 bits wide (Python integers make that free), so the
truncation loss of ``range // total`` is below 2**-40 per symbol for 16-bit
tables. Bytes are emitted most-significant first; a one-byte cache plus a run
counter of pending 0xFF bytes absorbs carries, as in the LZMA coder.

Stream length is deterministic: a stream whose decoder performed ``n`` byte
renormalizations is exactly ``n + 2`` bytes long. The decoder uses this to
report truncation and to tell callers where trailing data begins.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Sequence

import numpy as np

from ..priors import PMF_TOTAL, PRECISION_BITS, PmfTable

_MASK = (1 << 64) - 1
_TOP = 1 << 56
_FF_TOP = 0xFF << 56
_FINAL_STEP = 1 << 48
_LOOKAHEAD = 6


class CorruptStreamError(ValueError):
    pass


class RangeEncoder:
    def __init__(self, precision: int = PRECISION_BITS):
        self.precision = precision
        self.low = 0
        self.range = _MASK
        self._cache = 0
        self._pending = 1
        self._out = bytearray()

    def encode(self, start: int, freq: int) -> None:
        """Narrow the interval to ``[start, start + freq)`` out of ``2**precision``."""
        r = self.range >> self.precision
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def _shift_low(self) -> None:
        carry = self.low >> 64
        if carry or (self.low & _MASK) < _FF_TOP:
            byte = self._cache
            for _ in range(self._pending):
                self._out.append((byte + carry) & 0xFF)
                byte = 0xFF
            self._pending = 0
            self._cache = (self.low >> 56) & 0xFF
        self._pending += 1
        self.low = (self.low << 8) & _MASK

    def finish(self) -> bytes:
        # any value in [v, v + 2**48) decodes identically, so two bytes of v suffice
        # and whatever follows the stream cannot disturb it
        v = -(-self.low // _FINAL_STEP) * _FINAL_STEP
        assert v < self.low + self.range
        self.low = v
        for _ in range(3):
            self._shift_low()
        out = bytes(self._out)
        assert out[0] == 0, "leading byte must stay zero"
        return out[1:]


class RangeDecoder:
    def __init__(self, data: bytes, precision: int = PRECISION_BITS):
        self.data = data
        self.precision = precision
        self.pos = 0
        self.range = _MASK
        self._r = 0
        code = 0
        for _ in range(8):
            code = (code << 8) | self._next()
        self.code = code

    def _next(self) -> int:
        pos = self.pos
        self.pos = pos + 1
        return self.data[pos] if pos < len(self.data) else 0

    def target(self) -> int:
        """Cumulative-frequency slot the next symbol falls in."""
        self._r = self.range >> self.precision
        value = self.code // self._r
        if value >> self.precision:
            raise CorruptStreamError(f"decoder state out of range near byte {self.pos - 8}")
        return value

    def consume(self, start: int, freq: int) -> None:
        self.code -= self._r * start
        self.range = self._r * freq
        while self.range < _TOP:
            self.code = (self.code << 8) | self._next()
            self.range <<= 8

    def finish(self) -> int:
        """Validate the stream length; return how many bytes the range section occupied."""
        used = self.pos - _LOOKAHEAD
        if used > len(self.data):
            raise CorruptStreamError(
                f"truncated stream: range section needs {used} bytes, only {len(self.data)} present"
            )
        return used


def _as_tables(pmfs: PmfTable | Sequence[PmfTable], count: int) -> Sequence[PmfTable]:
    if isinstance(pmfs, PmfTable):
        return [pmfs] * count
    if len(pmfs) != count:
        raise ValueError(f"{len(pmfs)} tables for {count} symbols")
    return pmfs


def _cdf_cache(tables: Sequence[PmfTable]) -> dict[int, list[int]]:
    cache: dict[int, list[int]] = {}
    for table in tables:
        if table.total != PMF_TOTAL:
            raise ValueError(f"table total {table.total} != coder total {PMF_TOTAL}")
        if id(table) not in cache:
            cache[id(table)] = table.cdf.tolist()
    return cache


def range_encode(symbols: Sequence[int], pmfs: PmfTable | Sequence[PmfTable]) -> bytes:
    """Code ``symbols[i]`` under ``pmfs[i]`` (or under one shared table)."""
    symbols = [int(s) for s in symbols]
    tables = _as_tables(pmfs, len(symbols))
    for i, (sym, table) in enumerate(zip(symbols, tables)):
        if not table.contains(sym):
            raise ValueError(
                f"symbol {sym} at position {i} outside table range "
                f"[{table.offset}, {table.offset + len(table) - 1}]"
            )
    cdfs = _cdf_cache(tables)
    enc = RangeEncoder()
    for sym, table in zip(symbols, tables):
        cdf = cdfs[id(table)]
        j = sym - table.offset
        enc.encode(cdf[j], cdf[j + 1] - cdf[j])
    return enc.finish()


def range_decode(data: bytes, pmfs: PmfTable | Sequence[PmfTable], count: int, exact: bool = True) -> list[int]:
    """Inverse of :func:`range_encode`. With ``exact`` the stream must have no trailing bytes."""
    tables = _as_tables(pmfs, count)
    cdfs = _cdf_cache(tables)
    dec = RangeDecoder(data)
    out = []
    for table in tables:
        cdf = cdfs[id(table)]
        target = dec.target()
        j = bisect_right(cdf, target) - 1
        if j >= len(table):
            raise CorruptStreamError(f"target {target} beyond table near byte {dec.pos - 8}")
        dec.consume(cdf[j], cdf[j + 1] - cdf[j])
        out.append(j + table.offset)
    used = dec.finish()
    if exact and used != len(data):
        raise CorruptStreamError(f"stream has {len(data) - used} unexpected trailing bytes after byte {used}")
    return out


def encode_rows(indices: np.ndarray, freqs: np.ndarray) -> RangeEncoder:
    """Code ``indices[i]`` (0-based slot) under frequency row ``freqs[i]``; returns the open encoder."""
    cdf = np.zeros((freqs.shape[0], freqs.shape[1] + 1), dtype=np.int64)
    np.cumsum(freqs, axis=1, out=cdf[:, 1:])
    idx = np.asarray(indices, dtype=np.int64)
    starts = cdf[np.arange(idx.size), idx].tolist()
    sizes = freqs[np.arange(idx.size), idx].tolist()
    enc = RangeEncoder()
    for start, size in zip(starts, sizes):
        enc.encode(start, size)
    return enc


def decode_rows(data: bytes, freqs: np.ndarray) -> tuple[np.ndarray, int]:
    """Decode one slot per frequency row; returns (slots, bytes used by the range section)."""
    cdf = np.zeros((freqs.shape[0], freqs.shape[1] + 1), dtype=np.int64)
    np.cumsum(freqs, axis=1, out=cdf[:, 1:])
    dec = RangeDecoder(data)
    k = freqs.shape[1]
    out = np.empty(freqs.shape[0], dtype=np.int64)
    for i in range(freqs.shape[0]):
        row = cdf[i]
        target = dec.target()
        j = int(np.searchsorted(row, target, side="right")) - 1
        if j >= k:
            raise CorruptStreamError(f"target {target} beyond table near byte {dec.pos - 8}")
        dec.consume(int(row[j]), int(row[j + 1] - row[j]))
        out[i] = j
    return out, dec.finish()
