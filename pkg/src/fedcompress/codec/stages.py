"""Kernel-wise sparsification and stochastic magnitude quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..gradients import GradientTensor, LayerShape


def pruned_kernel_count(kernels: int, rho: float) -> int:
    return math.floor(rho * kernels)


def kept_kernel_count(kernels: int, rho: float) -> int:
    # equals ceil((1 - rho) * kernels) in exact arithmetic, without the float drift
    return kernels - pruned_kernel_count(kernels, rho)


@dataclass(frozen=True)
class SparsifyResult:
    mask: np.ndarray = field(repr=False)         # bool, (c_out, c_in)
    kept_values: np.ndarray = field(repr=False)  # float32, (M,)
    pruned_count: int

    @property
    def kept_kernels(self) -> int:
        return int(self.mask.sum())


def kernel_norms(tensor: GradientTensor) -> np.ndarray:
    k = tensor.kernels().astype(np.float64)
    return np.sqrt(np.einsum("ij,ij->i", k, k))


def sparsify(tensor: GradientTensor, rho: float) -> SparsifyResult:
    """Zero the floor(rho * c_out * c_in) kernels with the smallest L2 norm.

    Equal norms are pruned in ascending flat kernel order.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"pruning rate must lie in [0, 1), got {rho}")
    shape = tensor.shape
    pruned = pruned_kernel_count(shape.kernels, rho)
    keep = np.ones(shape.kernels, dtype=bool)
    if pruned:
        order = np.argsort(kernel_norms(tensor), kind="stable")
        keep[order[:pruned]] = False
    kept = tensor.kernels()[keep].reshape(-1).copy()
    return SparsifyResult(keep.reshape(shape.c_out, shape.c_in), kept, pruned)


def reconstruct_sparse(kept_values, mask, shape: LayerShape) -> GradientTensor:
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    kept_values = np.asarray(kept_values, dtype=np.float32).reshape(-1)
    if mask.size != shape.kernels:
        raise ValueError(f"mask has {mask.size} entries, shape needs {shape.kernels}")
    if kept_values.size != int(mask.sum()) * shape.kernel_size:
        raise ValueError(
            f"{kept_values.size} kept values do not match {int(mask.sum())} kept kernels of size {shape.kernel_size}"
        )
    dense = np.zeros((shape.kernels, shape.kernel_size), dtype=np.float32)
    dense[mask] = kept_values.reshape(-1, shape.kernel_size)
    return GradientTensor(shape, dense.reshape(-1))


@dataclass(frozen=True)
class QuantizedResult:
    indices: np.ndarray = field(repr=False)  # int64 in [0, L-1]
    signs: np.ndarray = field(repr=False)    # int8 in {-1, +1}
    abs_min: np.float32
    abs_max: np.float32
    levels: int

    def magnitudes(self) -> np.ndarray:
        return dequantize_magnitudes(self.indices, self.abs_min, self.abs_max, self.levels)

    def values(self) -> np.ndarray:
        return (self.signs * self.magnitudes()).astype(np.float32)


def dequantize_magnitudes(indices, abs_min, abs_max, levels: int) -> np.ndarray:
    """Grid magnitudes abs_min + index * (abs_max - abs_min) / (L - 1), stored as float32.

    Encoder and decoder both go through this function, so reconstruction is
    bit-identical on either side of the wire.
    """
    lo = np.float64(np.float32(abs_min))
    hi = np.float64(np.float32(abs_max))
    idx = np.asarray(indices, dtype=np.float64)
    mags = lo + idx * ((hi - lo) / (levels - 1))
    return np.minimum(mags, hi).astype(np.float32)


def stochastic_levels(offsets: np.ndarray, delta: float, levels: int, rng: np.random.Generator) -> np.ndarray:
    """Unbiased stochastic rounding of offsets in [0, delta] onto L grid points.

    Returns grid indices; an offset between grid points t and t+1 rounds up
    with probability equal to its fractional distance from t.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    u = rng.random(offsets.size)
    if delta == 0.0:
        return np.zeros(offsets.size, dtype=np.int64)
    scaled = np.clip(offsets / delta, 0.0, 1.0) * (levels - 1)
    lower = np.minimum(np.floor(scaled), levels - 2)
    frac = scaled - lower
    return (lower + (u < frac)).astype(np.int64)


def quantize(kept_values, levels: int, seed: int | np.random.Generator) -> QuantizedResult:
    kept_values = np.asarray(kept_values, dtype=np.float32).reshape(-1)
    if kept_values.size == 0:
        raise ValueError("cannot quantize an empty vector")
    if levels < 2:
        raise ValueError(f"need at least 2 quantization levels, got {levels}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    mags = np.abs(kept_values)
    abs_min = mags.min()
    abs_max = mags.max()
    lo = np.float64(abs_min)
    delta = np.float64(abs_max) - lo
    indices = stochastic_levels(mags.astype(np.float64) - lo, delta, levels, rng)
    signs = np.where(kept_values < 0, -1, 1).astype(np.int8)
    return QuantizedResult(indices, signs, np.float32(abs_min), np.float32(abs_max), levels)
