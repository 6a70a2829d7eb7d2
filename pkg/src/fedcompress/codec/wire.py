"""Per-layer wire records.

Record layout (LSB-first bit order, see ``bitio``)::

    header (112 bits)
        magic 8 | layer_id 16 | kind 2 | c_out 16 | c_in 16 | k 8 | L 8 |
        mask_flag 1 | index_flag 1 | reserved 4 | kept_kernel_count 32
    mask payload        bitmap (c_out*c_in bits) or CSR (flag = 1)
    code-length table   L x 5 bits, only when index_flag = 1 (Huffman)
    sign bits           M bits, 1 = negative
    abs_min, abs_max    2 x 32-bit IEEE-754
    index payload       M x log2(L) bits, or Huffman codes
    zero padding        to the next byte boundary
    crc32               32 bits over every preceding byte

CSR mask: for each output channel, the number of kept kernels
(bit_length(c_in) bits) followed by their input-channel columns in ascending
order (bit_length(c_in - 1) bits each).

Bias records carry kind = 2, L = 0, both flags 0, kept = c_out, and the raw
float32 values as payload.

The payload (the part compared against the size bound) is everything between
the header and the padding. Header, padding and CRC are framing.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from ..gradients import GradientTensor, LayerKind, LayerShape
from . import huffman
from .bitio import BitReader, BitWriter, FormatError
from .stages import QuantizedResult, dequantize_magnitudes, kept_kernel_count, reconstruct_sparse

MAGIC = 0xA7
HEADER_BITS = 112
CRC_BITS = 32

MASK_BITMAP, MASK_CSR = 0, 1
INDEX_FIXED, INDEX_HUFFMAN = 0, 1


def level_bits(levels: int) -> int:
    if levels < 2 or levels & (levels - 1):
        raise ValueError(f"levels must be a power of two >= 2, got {levels}")
    return levels.bit_length() - 1


def compressed_bits_bound(shape: LayerShape, rho: float, levels: int) -> int:
    """Payload size bound: c_out*c_in + ceil((1-rho) c_out c_in) k^2 (1 + log2 L) + 64."""
    kept = kept_kernel_count(shape.kernels, rho)
    return shape.kernels + kept * shape.kernel_size * (1 + level_bits(levels)) + 64


@dataclass(frozen=True)
class BitCounts:
    header: int
    mask: int
    code_table: int
    signs: int
    range: int
    indices: int
    padding: int
    crc: int

    @property
    def payload(self) -> int:
        return self.mask + self.code_table + self.signs + self.range + self.indices

    @property
    def framing(self) -> int:
        return self.header + self.padding + self.crc

    @property
    def total(self) -> int:
        return self.payload + self.framing


@dataclass(frozen=True)
class CompressedGradient:
    shape: LayerShape
    levels: int
    mask_flag: int
    index_flag: int
    kept_kernels: int
    bit_counts: BitCounts
    data: bytes = field(repr=False)

    @property
    def payload_bits(self) -> int:
        return self.bit_counts.payload

    def to_bytes(self) -> bytes:
        return self.data


def _csr_widths(shape: LayerShape) -> tuple[int, int]:
    return shape.c_in.bit_length(), (shape.c_in - 1).bit_length()


def _csr_bits(shape: LayerShape, kept: int) -> int:
    w_count, w_col = _csr_widths(shape)
    return shape.c_out * w_count + kept * w_col


def _write_header(w: BitWriter, shape: LayerShape, levels: int, mask_flag: int, index_flag: int, kept: int):
    if shape.layer_id >= 1 << 16 or shape.c_out >= 1 << 16 or shape.c_in >= 1 << 16 or shape.k >= 1 << 8:
        raise ValueError(f"{shape} exceeds the header field widths")
    for value, width in (
        (MAGIC, 8), (shape.layer_id, 16), (int(shape.kind), 2), (shape.c_out, 16), (shape.c_in, 16),
        (shape.k, 8), (levels, 8), (mask_flag, 1), (index_flag, 1), (0, 4), (kept, 32),
    ):
        w.write(value, width)


def _finish(w: BitWriter) -> tuple[bytes, int]:
    pad = w.pad_to_byte()
    body = w.to_bytes()
    crc = zlib.crc32(body)
    return body + crc.to_bytes(4, "little"), pad


def encode_bias(tensor: GradientTensor) -> CompressedGradient:
    shape = tensor.shape
    w = BitWriter()
    _write_header(w, shape, 0, 0, 0, shape.c_out)
    w.write_array(tensor.values.view(np.uint32), 32)
    data, pad = _finish(w)
    counts = BitCounts(HEADER_BITS, 0, 0, 0, 0, 32 * shape.size, pad, CRC_BITS)
    return CompressedGradient(shape, 0, 0, 0, shape.c_out, counts, data)


def encode(shape: LayerShape, mask, quantized: QuantizedResult) -> CompressedGradient:
    """Serialize a sparsified, quantized layer.

    The mask uses CSR only when strictly smaller than the bitmap; indices use
    canonical Huffman only when table plus codes is strictly smaller than
    fixed width.
    """
    if shape.kind == LayerKind.BIAS:
        raise ValueError("bias layers are sent uncompressed; use encode_bias")
    mask = np.asarray(mask, dtype=bool).reshape(shape.c_out, shape.c_in)
    kept = int(mask.sum())
    levels = quantized.levels
    width = level_bits(levels)
    m = kept * shape.kernel_size
    if kept == 0:
        raise ValueError("at least one kernel must be kept")
    if quantized.indices.size != m or quantized.signs.size != m:
        raise ValueError(f"quantized vector has {quantized.indices.size} entries, mask implies {m}")

    mask_flag = MASK_CSR if _csr_bits(shape, kept) < shape.kernels else MASK_BITMAP

    counts = np.bincount(quantized.indices, minlength=levels)
    lengths = huffman.code_lengths(counts)
    huff_bits = huffman.LENGTH_FIELD_BITS * levels + huffman.encoded_length(lengths, counts)
    use_huffman = max(lengths) <= huffman.MAX_CODE_LENGTH and huff_bits < m * width
    index_flag = INDEX_HUFFMAN if use_huffman else INDEX_FIXED

    w = BitWriter()
    _write_header(w, shape, levels, mask_flag, index_flag, kept)

    start = w.nbits
    if mask_flag == MASK_BITMAP:
        w.write_bits(mask.reshape(-1).astype(np.uint8))
    else:
        w_count, w_col = _csr_widths(shape)
        for row in mask:
            cols = np.flatnonzero(row)
            w.write(cols.size, w_count)
            w.write_array(cols, w_col)
    mask_bits = w.nbits - start

    table_bits = 0
    if use_huffman:
        w.write_array(np.array(lengths), huffman.LENGTH_FIELD_BITS)
        table_bits = huffman.LENGTH_FIELD_BITS * levels

    w.write_bits((quantized.signs < 0).astype(np.uint8))
    w.write_float32(quantized.abs_min)
    w.write_float32(quantized.abs_max)

    start = w.nbits
    if use_huffman:
        w.write_bits(huffman.encode_symbols(quantized.indices, lengths))
    else:
        w.write_array(quantized.indices, width)
    index_bits = w.nbits - start

    data, pad = _finish(w)
    bit_counts = BitCounts(HEADER_BITS, mask_bits, table_bits, m, 64, index_bits, pad, CRC_BITS)
    return CompressedGradient(shape, levels, mask_flag, index_flag, kept, bit_counts, data)


@dataclass(frozen=True)
class DecodedLayer:
    tensor: GradientTensor
    mask: np.ndarray          # bool, (c_out, c_in)
    bit_counts: BitCounts
    levels: int = 0
    mask_flag: int = 0
    index_flag: int = 0


def _parse(data: bytes) -> DecodedLayer:
    if len(data) < (HEADER_BITS + CRC_BITS) // 8:
        raise FormatError(f"record of {len(data)} bytes is shorter than the header", len(data))
    body, trailer = data[:-4], data[-4:]
    if zlib.crc32(body) != int.from_bytes(trailer, "little"):
        raise FormatError("checksum mismatch", len(body))

    r = BitReader(body)
    magic = r.read(8)
    if magic != MAGIC:
        raise FormatError(f"bad magic 0x{magic:02x}", 0)
    layer_id = r.read(16)
    kind = r.read(2)
    c_out, c_in, k, levels = r.read(16), r.read(16), r.read(8), r.read(8)
    mask_flag, index_flag, reserved, kept = r.read(1), r.read(1), r.read(4), r.read(32)
    if reserved:
        raise FormatError("reserved header bits are set", 9)
    if kind > LayerKind.BIAS:
        raise FormatError(f"unknown layer kind {kind}", 3)
    try:
        shape = LayerShape(layer_id, LayerKind(kind), c_out, c_in, k)
    except ValueError as exc:
        raise FormatError(f"invalid layer shape: {exc}", 3) from None

    if shape.kind == LayerKind.BIAS:
        if levels or mask_flag or index_flag or kept != c_out:
            raise FormatError("inconsistent bias record header", 8)
        raw = r.read_array(shape.size, 32).astype(np.uint32)
        values = raw.view(np.float32)
        if not np.all(np.isfinite(values)):
            raise FormatError("non-finite bias value", HEADER_BITS // 8)
        pad = _check_padding(r)
        counts = BitCounts(HEADER_BITS, 0, 0, 0, 0, 32 * shape.size, pad, CRC_BITS)
        return DecodedLayer(GradientTensor(shape, values), np.ones((c_out, 1), dtype=bool), counts)

    if levels < 2 or levels & (levels - 1):
        raise FormatError(f"invalid level count {levels}", 8)
    if not 1 <= kept <= shape.kernels:
        raise FormatError(f"kept kernel count {kept} outside [1, {shape.kernels}]", 10)
    if mask_flag == MASK_CSR and _csr_bits(shape, kept) >= shape.kernels:
        raise FormatError("CSR mask flagged where the bitmap is not larger", 12)
    width = level_bits(levels)
    m = kept * shape.kernel_size

    start = r.pos
    if mask_flag == MASK_BITMAP:
        mask = r.read_bits(shape.kernels).astype(bool).reshape(c_out, c_in)
    else:
        w_count, w_col = _csr_widths(shape)
        mask = np.zeros((c_out, c_in), dtype=bool)
        for o in range(c_out):
            n = r.read(w_count)
            if n > c_in:
                raise FormatError(f"CSR row {o} lists {n} columns", r.pos // 8)
            cols = r.read_array(n, w_col)
            if np.any(cols >= c_in) or np.any(np.diff(cols) <= 0):
                raise FormatError(f"CSR row {o} has invalid column indices", r.pos // 8)
            mask[o, cols] = True
    mask_bits = r.pos - start
    if int(mask.sum()) != kept:
        raise FormatError(f"mask keeps {int(mask.sum())} kernels, header says {kept}", start // 8)

    table_bits = 0
    lengths = None
    if index_flag == INDEX_HUFFMAN:
        start = r.pos
        lengths = r.read_array(levels, huffman.LENGTH_FIELD_BITS).tolist()
        huffman.validate_lengths(lengths, start // 8)
        table_bits = r.pos - start

    signs = np.where(r.read_bits(m).astype(bool), -1, 1).astype(np.int8)
    offset = r.pos // 8
    abs_min, abs_max = r.read_float32(), r.read_float32()
    if not (np.isfinite(abs_min) and np.isfinite(abs_max) and 0 <= abs_min <= abs_max):
        raise FormatError("invalid magnitude range", offset)

    start = r.pos
    if lengths is not None:
        indices = huffman.decode_symbols(r, m, lengths)
    else:
        indices = r.read_array(m, width)
    index_bits = r.pos - start

    pad = _check_padding(r)
    values = signs * dequantize_magnitudes(indices, abs_min, abs_max, levels)
    tensor = reconstruct_sparse(values.astype(np.float32), mask, shape)
    counts = BitCounts(HEADER_BITS, mask_bits, table_bits, m, 64, index_bits, pad, CRC_BITS)
    return DecodedLayer(tensor, mask, counts, levels, mask_flag, index_flag)


def _check_padding(r: BitReader) -> int:
    pad = r.remaining
    if pad >= 8:
        raise FormatError(f"{pad // 8} trailing bytes after payload", r.pos // 8)
    if pad and r.read_bits(pad).any():
        raise FormatError("non-zero padding bits", r.pos // 8)
    return pad


def decode_layer(blob: CompressedGradient | bytes) -> DecodedLayer:
    """Decode a record into the sparse quantized tensor and its kernel mask."""
    data = blob.data if isinstance(blob, CompressedGradient) else bytes(blob)
    return _parse(data)


def decode(blob: CompressedGradient | bytes) -> GradientTensor:
    return decode_layer(blob).tensor


def from_bytes(data: bytes) -> CompressedGradient:
    """Validate a raw record and wrap it as a CompressedGradient."""
    layer = _parse(bytes(data))
    kept = int(layer.mask.sum())
    return CompressedGradient(
        layer.tensor.shape, layer.levels, layer.mask_flag, layer.index_flag, kept, layer.bit_counts, bytes(data)
    )
