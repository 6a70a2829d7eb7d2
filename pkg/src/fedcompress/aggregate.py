"""Server-side masked, data-weighted element-wise aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codec import CompressedGradient, decode_layer
from .gradients import GradientTensor, LayerShape


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceUpload:
    device_id: int
    blobs: tuple[CompressedGradient, ...]
    data_count: int

    def __post_init__(self):
        object.__setattr__(self, "blobs", tuple(self.blobs))
        if self.data_count <= 0:
            raise ValueError("data_count must be positive")


@dataclass(frozen=True)
class GlobalGradient:
    layers: tuple[GradientTensor, ...]
    coverage: tuple[np.ndarray, ...] = field(repr=False)


def entry_mask(mask: np.ndarray, shape: LayerShape) -> np.ndarray:
    """Expand a (c_out, c_in) kernel mask to one flag per flat entry."""
    return np.repeat(np.asarray(mask, dtype=bool).reshape(-1), shape.kernel_size)


def _weighted_layer(values: Sequence[np.ndarray], masks: Sequence[np.ndarray], counts: Sequence[float]):
    num = np.zeros(values[0].size, dtype=np.float64)
    den = np.zeros(values[0].size, dtype=np.float64)
    cover = np.zeros(values[0].size, dtype=np.int64)
    for v, m, d in zip(values, masks, counts):
        w = m.astype(np.float64) * float(d)
        num += v.astype(np.float64) * w
        den += w
        cover += m
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out.astype(np.float32), cover


def aggregate_dense(dense_gradients, masks, data_counts, shapes: Sequence[LayerShape]) -> GlobalGradient:
    """Element-wise aggregation over already decoded per-device layers.

    ``dense_gradients[i][l]`` is device i's flat float32 values for layer l and
    ``masks[i][l]`` its per-entry boolean mask. Devices are accumulated in the
    order given, in float64, and rounded to float32 once.
    """
    layers = []
    coverage = []
    for l, shape in enumerate(shapes):
        vals = [np.asarray(g[l], dtype=np.float32).reshape(-1) for g in dense_gradients]
        ms = [np.asarray(m[l], dtype=bool).reshape(-1) for m in masks]
        if any(v.size != shape.size for v in vals) or any(m.size != shape.size for m in ms):
            raise AggregationError(f"layer {shape.layer_id}: size mismatch across devices")
        agg, cover = _weighted_layer(vals, ms, data_counts)
        layers.append(GradientTensor(shape, agg))
        coverage.append(cover)
    return GlobalGradient(tuple(layers), tuple(coverage))


def aggregate(uploads: Sequence[DeviceUpload]) -> GlobalGradient:
    """Decode every upload and combine entry k as sum(v m D) / sum(m D), or 0 when uncovered.

    Uploads are combined in ascending device_id order so the result does not
    depend on arrival order.
    """
    if not uploads:
        raise ValueError("no uploads to aggregate")
    uploads = sorted(uploads, key=lambda u: u.device_id)
    shapes = [b.shape for b in uploads[0].blobs]
    dense, masks = [], []
    for u in uploads:
        if [b.shape for b in u.blobs] != shapes:
            raise AggregationError(f"device {u.device_id} uploaded a different layer set")
        decoded = [decode_layer(b) for b in u.blobs]
        dense.append([d.tensor.values for d in decoded])
        masks.append([entry_mask(d.mask, d.tensor.shape) for d in decoded])
    return aggregate_dense(dense, masks, [u.data_count for u in uploads], shapes)


def aggregate_oracle(dense_gradients, masks, data_counts) -> list[np.ndarray]:
    """Brute-force per-entry masked weighted average; small inputs only.

    Inputs are per-device flat arrays for a single layer (or lists of such
    arrays per layer). Returns float32 arrays.
    """
    if dense_gradients and np.ndim(dense_gradients[0][0]) == 0:
        dense_gradients = [[g] for g in dense_gradients]
        masks = [[m] for m in masks]
    out = []
    for l in range(len(dense_gradients[0])):
        n = len(dense_gradients[0][l])
        layer = np.zeros(n, dtype=np.float32)
        for k in range(n):
            num = 0.0
            den = 0.0
            for i in range(len(dense_gradients)):
                m = 1.0 if masks[i][l][k] else 0.0
                num += float(dense_gradients[i][l][k]) * (m * float(data_counts[i]))
                den += m * float(data_counts[i])
            layer[k] = np.float32(num / den) if den > 0 else np.float32(0.0)
        out.append(layer)
    return out
