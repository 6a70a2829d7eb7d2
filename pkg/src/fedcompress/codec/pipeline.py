"""Model-level compression: compression ratio -> pruning rate -> per-layer records."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..gradients import GradientTensor, LayerKind, LayerShape, ModelGradient, layer_rng, total_bits_uncompressed
from .stages import quantize, sparsify
from .wire import CompressedGradient, compressed_bits_bound, encode, encode_bias, level_bits

RHO_EPSILON = 1e-9


class CompressionLimitWarning(UserWarning):
    """Requested compression ratio exceeds what the layer set can reach."""


@dataclass(frozen=True)
class CompressionConfig:
    levels_conv: int = 8
    levels_fc: int = 4
    pruning_rate: float = 0.0

    def __post_init__(self):
        level_bits(self.levels_conv)
        level_bits(self.levels_fc)
        if not 0.0 <= self.pruning_rate < 1.0:
            raise ValueError("pruning_rate must lie in [0, 1)")

    def levels_for(self, shape: LayerShape) -> int:
        return self.levels_conv if shape.kind == LayerKind.CONV else self.levels_fc


def _linear_bound_terms(shapes: Sequence[LayerShape], config: CompressionConfig) -> tuple[float, float]:
    """Summed payload bound as fixed + (1 - rho) * variable, ceiling relaxed."""
    fixed = 0.0
    variable = 0.0
    for s in shapes:
        if s.kind == LayerKind.BIAS:
            fixed += 32 * s.size
        else:
            fixed += s.kernels + 64
            variable += s.kernels * s.kernel_size * (1 + level_bits(config.levels_for(s)))
    return fixed, variable


def model_bits_bound(shapes: Sequence[LayerShape], rho: float, config: CompressionConfig) -> int:
    """Exact (ceiling included) payload bound summed over layers; bias layers count 32 bits/value."""
    return sum(
        32 * s.size if s.kind == LayerKind.BIAS else compressed_bits_bound(s, rho, config.levels_for(s))
        for s in shapes
    )


def max_compression_ratio(shapes: Sequence[LayerShape], config: CompressionConfig) -> float:
    fixed, variable = _linear_bound_terms(shapes, config)
    return total_bits_uncompressed(shapes) / (fixed + RHO_EPSILON * variable)


def ratio_to_pruning_rate(shapes: Sequence[LayerShape], alpha: float, config: CompressionConfig = CompressionConfig()) -> float:
    """Single pruning rate for all layers whose summed linear size bound is 32 N / alpha.

    Clamped to [0, 1 - 1e-9]; a CompressionLimitWarning is emitted when the
    upper clamp is hit.
    """
    if not alpha >= 1.0:
        raise ValueError(f"compression ratio must be >= 1, got {alpha}")
    fixed, variable = _linear_bound_terms(shapes, config)
    if variable == 0:
        return 0.0
    target = total_bits_uncompressed(shapes) / alpha
    rho = 1.0 - (target - fixed) / variable
    if rho > 1.0 - RHO_EPSILON:
        warnings.warn(
            f"compression ratio {alpha:g} is beyond reach (max {max_compression_ratio(shapes, config):.4g}); "
            "pruning rate clamped",
            CompressionLimitWarning,
            stacklevel=2,
        )
        return 1.0 - RHO_EPSILON
    return max(rho, 0.0)


def ceiling_slack_bits(shapes: Sequence[LayerShape], config: CompressionConfig) -> int:
    """Worst-case gap between the exact and linear bounds: one extra kernel per layer."""
    return sum(
        s.kernel_size * (1 + level_bits(config.levels_for(s))) for s in shapes if s.kind != LayerKind.BIAS
    )


def compress_layer(tensor: GradientTensor, rho: float, config: CompressionConfig, rng: np.random.Generator) -> CompressedGradient:
    if tensor.shape.kind == LayerKind.BIAS:
        return encode_bias(tensor)
    sparse = sparsify(tensor, rho)
    q = quantize(sparse.kept_values, config.levels_for(tensor.shape), rng)
    return encode(tensor.shape, sparse.mask, q)


def compress_model(
    model: ModelGradient, alpha: float, config: CompressionConfig = CompressionConfig(), seed: int = 0
) -> tuple[list[CompressedGradient], float]:
    """Compress every layer with the pruning rate implied by ``alpha``.

    Each layer draws its quantization randomness from its own (seed, layer_id)
    stream, so layers can be processed in any order. The achieved ratio is
    32 N / (sum of payload bits); it falls short of ``alpha`` by at most the
    ceiling slack (one kernel per layer), and headers are not counted.
    """
    rho = ratio_to_pruning_rate(model.shapes, alpha, config)
    blobs = [compress_layer(t, rho, config, layer_rng(seed, t.shape.layer_id)) for t in model.layers]
    payload = sum(b.payload_bits for b in blobs)
    return blobs, total_bits_uncompressed(model) / payload
