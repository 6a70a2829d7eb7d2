import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedcompress.aggregate import (
    AggregationError,
    DeviceUpload,
    aggregate,
    aggregate_dense,
    aggregate_oracle,
    entry_mask,
)
from fedcompress.codec import CompressionConfig, compress_model, decode_layer, encode_bias
from fedcompress.gradients import GradientTensor, LayerShape, SyntheticGradientSpec, synthetic_model

SHAPES = [LayerShape.conv(0, 4, 3, 3), LayerShape.bias(1, 4), LayerShape.fc(2, 5, 6)]


def _uploads(seed, devices=3, alphas=None, counts=None):
    rng = np.random.default_rng(seed)
    counts = counts or [int(c) for c in rng.integers(1, 100, devices)]
    alphas = alphas or [float(a) for a in rng.uniform(1, 4, devices)]
    out = []
    for i in range(devices):
        model = synthetic_model(SHAPES, SyntheticGradientSpec(seed=seed * 100 + i, kernel_scale_spread=3), counts[i])
        blobs, _ = compress_model(model, alphas[i], CompressionConfig(), seed + i)
        out.append(DeviceUpload(i, blobs, counts[i]))
    return out


def _dense(uploads):
    dense, masks = [], []
    for u in uploads:
        dec = [decode_layer(b) for b in u.blobs]
        dense.append([d.tensor.values for d in dec])
        masks.append([entry_mask(d.mask, d.tensor.shape) for d in dec])
    return dense, masks


def test_two_device_worked_example():
    shape = LayerShape.fc(0, 1, 1)
    out = aggregate_dense([[np.float32([0.4])], [np.float32([0.0])]], [[[True]], [[True]]], [1, 3], [shape])
    assert out.layers[0].values[0] == np.float32(0.1)


def test_single_device_identity():
    [u] = _uploads(1, devices=1, alphas=[1.0])
    out = aggregate([u])
    for blob, layer in zip(u.blobs, out.layers):
        assert layer == decode_layer(blob).tensor


def test_uncovered_entry_is_zero_and_single_cover_passes_through():
    shape = LayerShape.fc(0, 1, 3)
    v1 = np.float32([1.0, 2.0, 3.0])
    v2 = np.float32([5.0, 6.0, 7.0])
    m1 = np.array([True, True, False])
    m2 = np.array([False, True, False])
    out = aggregate_dense([[v1], [v2]], [[m1], [m2]], [2, 5], [shape])
    vals = out.layers[0].values
    assert vals[0] == 1.0 and vals[2] == 0.0
    assert vals[1] == np.float32((2.0 * 2 + 6.0 * 5) / 7)
    assert out.coverage[0].tolist() == [1, 2, 0]


def test_full_masks_reduce_to_fedavg():
    rng = np.random.default_rng(3)
    shape = LayerShape.fc(0, 4, 9)
    vals = [rng.normal(size=36).astype(np.float32) for _ in range(4)]
    ones = [np.ones(36, dtype=bool)] * 4
    same = aggregate_dense([[v] for v in vals], [[m] for m in ones], [7] * 4, [shape]).layers[0].values
    assert np.allclose(same, np.mean(vals, axis=0), rtol=1e-6, atol=1e-7)
    d = [1, 2, 3, 10]
    weighted = aggregate_dense([[v] for v in vals], [[m] for m in ones], d, [shape]).layers[0].values
    expected = sum(di * v.astype(np.float64) for di, v in zip(d, vals)) / sum(d)
    assert np.allclose(weighted, expected, rtol=1e-6, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_aggregate_matches_oracle(seed, devices):
    uploads = _uploads(seed, devices)
    dense, masks = _dense(uploads)
    fast = aggregate(uploads)
    slow = aggregate_oracle(dense, masks, [u.data_count for u in uploads])
    for a, b in zip(fast.layers, slow):
        assert np.array_equal(a.values, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.permutations(range(4)))
def test_permutation_invariance(seed, perm):
    uploads = _uploads(seed, 4)
    a = aggregate(uploads)
    b = aggregate([uploads[i] for i in perm])
    assert all(x == y for x, y in zip(a.layers, b.layers))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([2, 4, 8, 1024, 0.5]))
def test_data_scaling_invariance(seed, scale):
    # power-of-two scales are exact in binary floating point
    uploads = _uploads(seed, 3, counts=[4, 6, 10])
    scaled = [DeviceUpload(u.device_id, u.blobs, u.data_count * scale) for u in uploads]
    a = aggregate(uploads)
    b = aggregate(scaled)
    assert all(x == y for x, y in zip(a.layers, b.layers))


def test_mismatched_layer_sets_rejected():
    u = _uploads(0, 2)
    bad = DeviceUpload(5, (encode_bias(GradientTensor(LayerShape.bias(1, 4), np.zeros(4))),), 3)
    with pytest.raises(AggregationError):
        aggregate([u[0], bad])
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        DeviceUpload(0, (), 0)


def test_entry_mask_expands_kernels():
    shape = LayerShape.conv(0, 1, 2, 2)
    assert entry_mask(np.array([[True, False]]), shape).tolist() == [True] * 4 + [False] * 4
