import numpy as np
import pytest

from reference import naive_max_pool, naive_multiscale_columns, naive_window_argmax

from msvlad import errors
from msvlad.gradcheck import finite_difference, max_relative_error
from msvlad.pooling import (
    PoolingMode,
    column_count,
    extract_columns,
    max_pool,
    multiscale_backward,
    multiscale_columns,
)
from msvlad.tensor_io import FeatureMap


def test_max_pool_2x2_single_window():
    fmap = FeatureMap(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1))
    out = max_pool(fmap, 2)
    assert out.values.shape == (1, 1, 1)
    assert out.values[0, 0, 0] == 4.0


@pytest.mark.parametrize("kernel", [2, 3])
def test_constant_map_stays_constant(kernel):
    fmap = FeatureMap(np.full((5, 6, 2), 3.25))
    out = max_pool(fmap, kernel)
    assert np.all(out.values == 3.25)
    assert out.values.shape == (5 - kernel + 1, 6 - kernel + 1, 2)


def test_max_pool_matches_naive_oracle():
    rng = np.random.default_rng(5)
    values = rng.normal(size=(5, 4, 3))
    out = max_pool(FeatureMap(values), 3)
    assert np.array_equal(out.values, naive_max_pool(values, 3))


def test_max_pool_rejects_small_maps():
    with pytest.raises(errors.DimensionError):
        max_pool(FeatureMap(np.zeros((2, 5, 1))), 3)
    with pytest.raises(errors.DomainError):
        max_pool(FeatureMap(np.zeros((5, 5, 1))), 4)


def test_extract_columns_single_location():
    fmap = FeatureMap(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 4))
    cols = extract_columns(fmap)
    assert cols.count == 1
    assert cols.values[0].tolist() == [1.0, 2.0, 3.0, 4.0]


def test_extract_columns_row_major_order():
    fmap = FeatureMap(np.arange(4.0).reshape(2, 2, 1))
    cols = extract_columns(fmap)
    assert cols.values.ravel().tolist() == [0.0, 1.0, 2.0, 3.0]
    assert cols.provenance[:, 1:].tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]


def test_extract_columns_matches_scan_positions():
    rng = np.random.default_rng(9)
    values = rng.normal(size=(3, 3, 2))
    cols = extract_columns(FeatureMap(values))
    for i in range(9):
        assert np.array_equal(cols.values[i], values[i // 3, i % 3])


def test_multiscale_count_examples():
    fmap = FeatureMap(np.random.default_rng(0).normal(size=(4, 4, 2)))
    assert multiscale_columns(fmap, PoolingMode.BOTH).count == 13
    fmap3 = FeatureMap(np.random.default_rng(1).normal(size=(3, 3, 2)))
    assert multiscale_columns(fmap3, PoolingMode.THREE).count == 1


def test_multiscale_concatenation_order():
    rng = np.random.default_rng(2)
    fmap = FeatureMap(rng.normal(size=(5, 4, 3)))
    cols = multiscale_columns(fmap, PoolingMode.BOTH)
    assert np.array_equal(cols.values, naive_multiscale_columns(fmap.values, (2, 3)))
    n_two = 4 * 3
    assert np.all(cols.provenance[:n_two, 0] == 2)
    assert np.all(cols.provenance[n_two:, 0] == 3)


def test_count_law_sweep():
    for h in range(3, 21):
        for w in range(3, 21):
            fmap = FeatureMap(np.zeros((h, w, 1)))
            assert multiscale_columns(fmap, PoolingMode.TWO).count == (h - 1) * (w - 1)
            assert multiscale_columns(fmap, PoolingMode.THREE).count == (h - 2) * (w - 2)
            both = (h - 1) * (w - 1) + (h - 2) * (w - 2)
            assert multiscale_columns(fmap, PoolingMode.BOTH).count == both
            assert column_count(PoolingMode.BOTH, h, w) == both


def test_stride16_grid_column_count():
    # the 21x21 grid of a 336-pixel input at backbone stride 16
    fmap = FeatureMap(np.zeros((21, 21, 4)))
    assert multiscale_columns(fmap, PoolingMode.BOTH).count == 400 + 361


def test_max_dominance_property():
    rng = np.random.default_rng(12)
    for _ in range(50):
        h, w, c = rng.integers(3, 8), rng.integers(3, 8), rng.integers(1, 4)
        values = rng.normal(size=(int(h), int(w), int(c)))
        fmap = FeatureMap(values)
        for mode in PoolingMode:
            cols = multiscale_columns(fmap, mode)
            for row, (kernel, gy, gx) in zip(cols.values, cols.provenance):
                window = values[gy:gy + kernel, gx:gx + kernel]
                assert np.all(row[None, None, :] >= window)
                assert np.all(row == window.max(axis=(0, 1)))


def test_monotonicity_under_constant_shift():
    rng = np.random.default_rng(13)
    values = rng.normal(size=(5, 5, 3))
    base = multiscale_columns(FeatureMap(values), PoolingMode.BOTH).values
    shifted = multiscale_columns(FeatureMap(values + 0.75), PoolingMode.BOTH).values
    assert np.allclose(shifted - base, 0.75)


def test_backward_counts_windows_with_unique_maxima():
    rng = np.random.default_rng(4)
    values = rng.permutation(np.linspace(0.0, 1.0, 5 * 4 * 2)).reshape(5, 4, 2)
    fmap = FeatureMap(values)
    mode = PoolingMode.BOTH
    n = column_count(mode, 5, 4)
    grad = multiscale_backward(fmap, np.ones((n, 2)), mode)

    expected = np.zeros_like(values)
    for kernel in (2, 3):
        for i in range(5 - kernel + 1):
            for j in range(4 - kernel + 1):
                for ch in range(2):
                    y, x = naive_window_argmax(values, kernel, i, j, ch)
                    expected[y, x, ch] += 1.0
    assert np.array_equal(grad, expected)


def test_backward_zero_gradient():
    fmap = FeatureMap(np.random.default_rng(1).normal(size=(4, 4, 2)))
    grad = multiscale_backward(fmap, np.zeros((13, 2)), PoolingMode.BOTH)
    assert np.all(grad == 0)


def test_backward_shape_mismatch():
    fmap = FeatureMap(np.zeros((4, 4, 2)))
    with pytest.raises(errors.DimensionError):
        multiscale_backward(fmap, np.zeros((12, 2)), PoolingMode.BOTH)


def test_backward_finite_differences():
    rng = np.random.default_rng(21)
    values = rng.permutation(np.linspace(0.0, 1.0, 4 * 5 * 2)).reshape(4, 5, 2)
    mode = PoolingMode.BOTH
    upstream = rng.normal(size=(column_count(mode, 4, 5), 2))

    analytic = multiscale_backward(FeatureMap(values), upstream, mode)

    def loss(v):
        return float((upstream * multiscale_columns(FeatureMap(v), mode).values).sum())

    numeric = finite_difference(loss, values, 1e-5)
    assert max_relative_error(analytic, numeric) < 1e-6


def test_multiscale_rejects_undersized_maps():
    short = FeatureMap(np.zeros((2, 5, 1)))
    with pytest.raises(errors.DimensionError):
        multiscale_columns(short, PoolingMode.BOTH)
    with pytest.raises(errors.DimensionError):
        multiscale_columns(short, PoolingMode.THREE)
    assert multiscale_columns(short, PoolingMode.TWO).count == 4
