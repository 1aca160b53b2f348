"""MSB-first bit I/O and signed order-0 Exp-Golomb codes."""

from __future__ import annotations


class BitWriter:
    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._nbits = 0

    def write_bit(self, bit: int) -> None:
        self._acc = (self._acc << 1) | (bit & 1)
        self._nbits += 1
        if self._nbits == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._nbits = 0

    def write_bits(self, value: int, count: int) -> None:
        for shift in range(count - 1, -1, -1):
            self.write_bit((value >> shift) & 1)

    @property
    def bit_length(self) -> int:
        return 8 * len(self._bytes) + self._nbits

    def getvalue(self) -> bytes:
        """Bytes written so far, last byte zero-padded."""
        if self._nbits:
            return bytes(self._bytes) + bytes([self._acc << (8 - self._nbits)])
        return bytes(self._bytes)


class BitReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0  # in bits

    def read_bit(self) -> int:
        byte = self.pos >> 3
        if byte >= len(self.data):
            raise EOFError(f"bit reader ran past end of data at bit {self.pos}")
        bit = (self.data[byte] >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit

    def read_bits(self, count: int) -> int:
        value = 0
        for _ in range(count):
            value = (value << 1) | self.read_bit()
        return value


def zigzag(v: int) -> int:
    return 2 * v if v >= 0 else -2 * v - 1


def unzigzag(m: int) -> int:
    return m // 2 if m % 2 == 0 else -(m + 1) // 2


def exp_golomb_encode(value: int, writer: BitWriter) -> None:
    """Zigzag-map ``value`` then write the order-0 Exp-Golomb code of the result."""
    m = zigzag(value) + 1
    n = m.bit_length()
    writer.write_bits(0, n - 1)
    writer.write_bits(m, n)


def exp_golomb_decode(reader: BitReader) -> int:
    zeros = 0
    while reader.read_bit() == 0:
        zeros += 1
        if zeros > 64:
            raise ValueError(f"Exp-Golomb prefix longer than 64 bits at bit {reader.pos}")
    m = (1 << zeros) | reader.read_bits(zeros)
    return unzigzag(m - 1)
