"""LSB-first bit packing.

Bits fill each byte from the least significant bit upward. Multi-bit integer
fields are written least significant bit first. Huffman codes are the one
exception: they are emitted most significant code bit first, so the decoder
can walk the prefix code one bit at a time.
"""

from __future__ import annotations

import numpy as np


class FormatError(ValueError):
    """Malformed or corrupt compressed stream."""

    def __init__(self, message: str, byte_offset: int | None = None):
        self.byte_offset = byte_offset
        if byte_offset is not None:
            message = f"{message} (at byte {byte_offset})"
        super().__init__(message)


def _field_bits(values: np.ndarray, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.uint64).reshape(-1)
    shifts = np.arange(width, dtype=np.uint64)
    return ((values[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).reshape(-1)


class BitWriter:
    def __init__(self):
        self._chunks: list[np.ndarray] = []
        self._pending: list[int] = []  # scalar fields, flushed before array writes
        self.nbits = 0

    def write(self, value: int, width: int) -> None:
        if width == 0:
            return
        if value < 0 or value >> width:
            raise ValueError(f"value {value} does not fit in {width} bits")
        self._pending.extend((value >> i) & 1 for i in range(width))
        self.nbits += width

    def _flush(self) -> None:
        if self._pending:
            self._chunks.append(np.array(self._pending, dtype=np.uint8))
            self._pending = []

    def write_array(self, values, width: int) -> None:
        if width == 0:
            return
        bits = _field_bits(values, width)
        self._flush()
        self._chunks.append(bits)
        self.nbits += bits.size

    def write_bits(self, bits: np.ndarray) -> None:
        bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
        self._flush()
        self._chunks.append(bits)
        self.nbits += bits.size

    def write_float32(self, x) -> None:
        self.write(int(np.float32(x).view(np.uint32)), 32)

    def pad_to_byte(self) -> int:
        pad = -self.nbits % 8
        if pad:
            self.write_bits(np.zeros(pad, dtype=np.uint8))
        return pad

    def to_bytes(self) -> bytes:
        if self.nbits % 8:
            raise ValueError("stream is not byte aligned")
        self._flush()
        if not self._chunks:
            return b""
        return np.packbits(np.concatenate(self._chunks), bitorder="little").tobytes()


class BitReader:
    def __init__(self, data: bytes, nbits: int | None = None):
        self._bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
        self.limit = self._bits.size if nbits is None else nbits
        self.pos = 0
        self._list: list[int] | None = None

    @property
    def remaining(self) -> int:
        return self.limit - self.pos

    def _take(self, n: int) -> np.ndarray:
        if n > self.remaining:
            raise FormatError(f"stream truncated: need {n} bits, {self.remaining} left", self.pos // 8)
        out = self._bits[self.pos:self.pos + n]
        self.pos += n
        return out

    def read(self, width: int) -> int:
        if width == 0:
            return 0
        if width > self.remaining:
            raise FormatError(f"stream truncated: need {width} bits, {self.remaining} left", self.pos // 8)
        if self._list is None:
            self._list = self._bits.tolist()
        bits = self._list[self.pos:self.pos + width]
        self.pos += width
        value = 0
        for i, b in enumerate(bits):
            value |= b << i
        return value

    def read_array(self, count: int, width: int) -> np.ndarray:
        if width == 0 or count == 0:
            return np.zeros(count, dtype=np.int64)
        bits = self._take(count * width).reshape(count, width).astype(np.int64)
        return bits @ (np.int64(1) << np.arange(width, dtype=np.int64))

    def read_bits(self, n: int) -> np.ndarray:
        return self._take(n)

    def read_float32(self) -> np.float32:
        return np.array([self.read(32)], dtype=np.uint32).view(np.float32)[0]
