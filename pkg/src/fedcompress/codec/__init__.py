"""Device-side gradient compression: sparsify, quantize, encode."""

from .bitio import FormatError
from .pipeline import (
    CompressionConfig,
    CompressionLimitWarning,
    ceiling_slack_bits,
    compress_layer,
    compress_model,
    max_compression_ratio,
    model_bits_bound,
    ratio_to_pruning_rate,
)
from .stages import (
    QuantizedResult,
    SparsifyResult,
    dequantize_magnitudes,
    quantize,
    reconstruct_sparse,
    sparsify,
    stochastic_levels,
)
from .wire import (
    BitCounts,
    CompressedGradient,
    DecodedLayer,
    compressed_bits_bound,
    decode,
    decode_layer,
    encode,
    encode_bias,
    from_bytes,
)
