"""Canonical Huffman coding over a small symbol alphabet (quantization indices)."""

from __future__ import annotations

import heapq

import numpy as np

from .bitio import BitReader, FormatError

LENGTH_FIELD_BITS = 5
MAX_CODE_LENGTH = (1 << LENGTH_FIELD_BITS) - 1


def code_lengths(counts) -> list[int]:
    """Huffman code lengths per symbol; unused symbols get length 0.

    Ties are broken by the smallest symbol in each subtree so the result is
    deterministic. A lone used symbol gets a 1-bit code.
    """
    counts = [int(c) for c in counts]
    lengths = [0] * len(counts)
    heap = [(c, s, [s]) for s, c in enumerate(counts) if c > 0]
    if not heap:
        return lengths
    if len(heap) == 1:
        lengths[heap[0][1]] = 1
        return lengths
    heapq.heapify(heap)
    while len(heap) > 1:
        c1, s1, m1 = heapq.heappop(heap)
        c2, s2, m2 = heapq.heappop(heap)
        for s in m1 + m2:
            lengths[s] += 1
        heapq.heappush(heap, (c1 + c2, min(s1, s2), m1 + m2))
    return lengths


def canonical_codes(lengths) -> dict[int, tuple[int, int]]:
    """symbol -> (code, length), assigned in (length, symbol) order."""
    code = 0
    prev = 0
    codes = {}
    for length, sym in sorted((l, s) for s, l in enumerate(lengths) if l > 0):
        code <<= length - prev
        codes[sym] = (code, length)
        code += 1
        prev = length
    return codes


def encoded_length(lengths, counts) -> int:
    return int(sum(l * c for l, c in zip(lengths, counts)))


def encode_symbols(symbols: np.ndarray, lengths) -> np.ndarray:
    """Bit array (MSB-first per code) for the symbol sequence."""
    codes = canonical_codes(lengths)
    width = max(lengths)
    table = np.zeros((len(lengths), width), dtype=np.uint8)
    valid = np.zeros((len(lengths), width), dtype=bool)
    for sym, (code, length) in codes.items():
        for j in range(length):
            table[sym, j] = (code >> (length - 1 - j)) & 1
        valid[sym, :length] = True
    symbols = np.asarray(symbols, dtype=np.int64)
    return table[symbols][valid[symbols]]


def validate_lengths(lengths, offset: int | None = None) -> None:
    if not any(lengths):
        raise FormatError("empty Huffman code-length table", offset)
    kraft = sum(2.0 ** -l for l in lengths if l > 0)
    used = sum(1 for l in lengths if l > 0)
    if kraft > 1.0 or (used > 1 and kraft != 1.0):
        raise FormatError("Huffman code-length table is not a complete prefix code", offset)


def decode_symbols(reader: BitReader, count: int, lengths) -> np.ndarray:
    max_len = max(lengths)
    # canonical decoding tables: first code and symbol list per length
    by_len = [[] for _ in range(max_len + 1)]
    for sym, l in enumerate(lengths):
        if l:
            by_len[l].append(sym)
    first = [0] * (max_len + 2)
    code = 0
    for l in range(1, max_len + 1):
        first[l] = code
        code = (code + len(by_len[l])) << 1

    nbits = min(reader.remaining, count * max_len)
    bits = reader._bits[reader.pos:reader.pos + nbits].tolist()
    out = np.empty(count, dtype=np.int64)
    pos = 0
    for j in range(count):
        code = 0
        length = 0
        while True:
            if pos >= nbits:
                raise FormatError("Huffman payload truncated", (reader.pos + pos) // 8)
            code = (code << 1) | bits[pos]
            pos += 1
            length += 1
            idx = code - first[length]
            if 0 <= idx < len(by_len[length]):
                out[j] = by_len[length][idx]
                break
            if length >= max_len:
                raise FormatError("invalid Huffman code", (reader.pos + pos) // 8)
    reader.pos += pos
    return out
