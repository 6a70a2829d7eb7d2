import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import spearmanr

from fedcompress.gradients import (
    GradientTensor,
    LayerKind,
    LayerShape,
    ModelGradient,
    SyntheticGradientSpec,
    flat_index,
    generate_synthetic,
    kernel_scales,
    synthetic_model,
    total_bits_uncompressed,
)


def test_flat_index_examples():
    s = LayerShape.conv(0, 2, 2, 3)
    assert flat_index(s, 0, 0, 0, 0) == 0
    assert flat_index(s, 1, 1, 2, 2) == 35
    assert flat_index(s, 0, 1, 0, 0) == 9


def test_flat_index_out_of_range():
    s = LayerShape.conv(0, 2, 2, 3)
    with pytest.raises(IndexError):
        flat_index(s, 2, 0, 0, 0)
    with pytest.raises(IndexError):
        flat_index(s, 0, 0, 3, 0)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_flat_index_is_a_bijection(c_out, c_in, k):
    s = LayerShape.conv(0, c_out, c_in, k)
    seen = [flat_index(s, o, i, r, c) for o in range(c_out) for i in range(c_in) for r in range(k) for c in range(k)]
    assert seen == list(range(s.size))


def test_shape_invariants():
    with pytest.raises(ValueError):
        LayerShape(0, LayerKind.FULLY_CONNECTED, 2, 2, 3)
    with pytest.raises(ValueError):
        LayerShape(0, LayerKind.BIAS, 2, 2, 1)
    with pytest.raises(ValueError):
        LayerShape.conv(0, 0, 1, 3)
    assert LayerShape.fc(1, 10, 4).kernel_size == 1
    assert LayerShape.bias(2, 7).size == 7


def test_tensor_rejects_bad_values():
    s = LayerShape.fc(0, 2, 2)
    with pytest.raises(ValueError):
        GradientTensor(s, np.zeros(3))
    with pytest.raises(ValueError):
        GradientTensor(s, np.array([0.0, np.nan, 0.0, 0.0]))
    t = GradientTensor(s, np.arange(4))
    assert t.values.dtype == np.float32
    assert not t.values.flags.writeable


def test_model_layer_ids_ascending():
    a = GradientTensor(LayerShape.fc(1, 1, 1), [0.0])
    b = GradientTensor(LayerShape.fc(0, 1, 1), [0.0])
    with pytest.raises(ValueError):
        ModelGradient((a, b))
    with pytest.raises(ValueError):
        ModelGradient((a, a))


def test_total_bits_examples():
    conv = LayerShape.conv(0, 2, 2, 3)
    fc = LayerShape.fc(1, 10, 4)
    assert total_bits_uncompressed([conv]) == 1152
    assert total_bits_uncompressed([]) == 0
    assert total_bits_uncompressed([conv, fc]) == 2432
    model = synthetic_model([conv, fc], SyntheticGradientSpec(seed=1))
    assert total_bits_uncompressed(model) == 2432


def test_synthetic_is_deterministic():
    s = LayerShape.conv(3, 4, 4, 3)
    spec = SyntheticGradientSpec(seed=11, kernel_scale_spread=5)
    assert generate_synthetic(s, spec) == generate_synthetic(s, spec)
    assert generate_synthetic(s, spec) != generate_synthetic(s, SyntheticGradientSpec(seed=12, kernel_scale_spread=5))


def test_unit_spread_shares_one_scale():
    s = LayerShape.conv(0, 4, 4, 3)
    assert np.all(kernel_scales(s, SyntheticGradientSpec(seed=3, kernel_scale_spread=1.0)) == 1.0)


def test_kernel_stds_follow_scale_order():
    s = LayerShape.conv(0, 4, 4, 3)
    spec = SyntheticGradientSpec(seed=7, kernel_scale_spread=8)
    scales = kernel_scales(s, spec)
    stds = generate_synthetic(s, spec).kernels().std(axis=1)
    # 9 samples per kernel is noisy; require a strong rank agreement rather than an exact match
    assert spearmanr(scales, stds).correlation > 0.8
    assert np.isclose(scales.min(), 1.0) and np.isclose(scales.max(), 8.0)


def test_spread_below_one_rejected():
    with pytest.raises(ValueError):
        SyntheticGradientSpec(kernel_scale_spread=0.5)
