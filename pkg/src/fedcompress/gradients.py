"""Layer-shaped gradient containers and a seeded synthetic gradient source.

Flat layout is c_out-major: index = ((o * c_in + i) * k + r) * k + c, so each
k x k kernel occupies a contiguous run of k*k values.

Randomness uses numpy's PCG64 bit generator seeded through ``SeedSequence``;
PCG64 output is identical across platforms for a given seed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class LayerKind(enum.IntEnum):
    CONV = 0
    FULLY_CONNECTED = 1
    BIAS = 2


@dataclass(frozen=True)
class LayerShape:
    layer_id: int
    kind: LayerKind
    c_out: int
    c_in: int = 1
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.layer_id < 0:
            raise ValueError(f"layer_id must be >= 0, got {self.layer_id}")
        for name in ("c_out", "c_in", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.kind == LayerKind.FULLY_CONNECTED and self.k != 1:
            raise ValueError("fully connected layers have k = 1")
        if self.kind == LayerKind.BIAS and (self.c_in != 1 or self.k != 1):
            raise ValueError("bias layers have c_in = 1 and k = 1")

    @classmethod
    def conv(cls, layer_id: int, c_out: int, c_in: int, k: int) -> "LayerShape":
        return cls(layer_id, LayerKind.CONV, c_out, c_in, k)

    @classmethod
    def fc(cls, layer_id: int, c_out: int, c_in: int) -> "LayerShape":
        return cls(layer_id, LayerKind.FULLY_CONNECTED, c_out, c_in, 1)

    @classmethod
    def bias(cls, layer_id: int, size: int) -> "LayerShape":
        return cls(layer_id, LayerKind.BIAS, size, 1, 1)

    @property
    def kernels(self) -> int:
        """Number of k x k kernels (the sparsification unit)."""
        return self.c_out * self.c_in

    @property
    def kernel_size(self) -> int:
        return self.k * self.k

    @property
    def size(self) -> int:
        return self.c_out * self.c_in * self.k * self.k


def flat_index(shape: LayerShape, o: int, i: int, r: int, c: int) -> int:
    if not (0 <= o < shape.c_out and 0 <= i < shape.c_in and 0 <= r < shape.k and 0 <= c < shape.k):
        raise IndexError(f"coordinate ({o}, {i}, {r}, {c}) out of range for {shape}")
    return ((o * shape.c_in + i) * shape.k + r) * shape.k + c


@dataclass(frozen=True)
class GradientTensor:
    shape: LayerShape
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1)
        if values.size != self.shape.size:
            raise ValueError(f"expected {self.shape.size} values for {self.shape}, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("gradient values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def kernels(self) -> np.ndarray:
        """View of the values as a (c_out * c_in, k * k) matrix."""
        return self.values.reshape(self.shape.kernels, self.shape.kernel_size)

    def __eq__(self, other):
        if not isinstance(other, GradientTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class ModelGradient:
    layers: tuple[GradientTensor, ...]
    data_count: int = 1

    def __post_init__(self):
        layers = tuple(self.layers)
        ids = [t.shape.layer_id for t in layers]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("layer ids must be unique and ascending")
        if self.data_count < 1:
            raise ValueError("data_count must be positive")
        object.__setattr__(self, "layers", layers)

    @property
    def shapes(self) -> list[LayerShape]:
        return [t.shape for t in self.layers]

    @property
    def size(self) -> int:
        return sum(t.shape.size for t in self.layers)


def total_bits_uncompressed(model: ModelGradient | Sequence[LayerShape]) -> int:
    shapes = model.shapes if isinstance(model, ModelGradient) else model
    return 32 * sum(s.size for s in shapes)


@dataclass(frozen=True)
class SyntheticGradientSpec:
    seed: int = 0
    kernel_scale_spread: float = 1.0

    def __post_init__(self):
        if not self.kernel_scale_spread >= 1.0:
            raise ValueError("kernel_scale_spread must be >= 1")


def layer_rng(seed: int, layer_id: int) -> np.random.Generator:
    """Independent PCG64 stream for one (seed, layer) pair."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & (2**64 - 1), layer_id])))


def kernel_scales(shape: LayerShape, spec: SyntheticGradientSpec) -> np.ndarray:
    """Per-kernel standard deviations, log-spaced on [1, spread], in a seeded order."""
    n = shape.kernels
    scales = np.geomspace(1.0, spec.kernel_scale_spread, n) if n > 1 else np.ones(1)
    order = layer_rng(spec.seed, shape.layer_id).permutation(n)
    return scales[order]


def generate_synthetic(shape: LayerShape, spec: SyntheticGradientSpec) -> GradientTensor:
    scales = kernel_scales(shape, spec)
    rng = layer_rng(spec.seed, shape.layer_id)
    rng.permutation(shape.kernels)  # keep the draw sequence aligned with kernel_scales
    z = rng.standard_normal((shape.kernels, shape.kernel_size))
    return GradientTensor(shape, (z * scales[:, None]).astype(np.float32))


def synthetic_model(shapes: Sequence[LayerShape], spec: SyntheticGradientSpec, data_count: int = 1) -> ModelGradient:
    return ModelGradient(tuple(generate_synthetic(s, spec) for s in shapes), data_count)
