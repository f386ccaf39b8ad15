"""
Tests for the numeric primitives in utils/tensor_core.py
"""

import numpy as np
import pytest

from utils.errors import InsufficientCellsError, NonFiniteError, ShapeMismatchError
from utils.tensor_core import (
    CellMask,
    FeatureGrid,
    LinearMap,
    ScalarGrid,
    SparseCells,
    apply_linear,
    bilinear_sample,
    cellwise_max,
    conv2d_3x3,
    cosine_similarity,
    delta_kernel,
    gather_cells,
    layer_norm,
    layer_norm_grid,
    minmax_normalize,
    ratio_count,
    scatter_cells,
    topk_cells,
)


def row(values):
    return ScalarGrid(np.array([values], dtype=float))


# ============================================================================
# VALUE TYPES
# ============================================================================

def test_grids_reject_non_finite_values():
    with pytest.raises(NonFiniteError):
        ScalarGrid(np.array([[1.0, np.nan]]))
    with pytest.raises(NonFiniteError):
        FeatureGrid(np.full((1, 1, 2), np.inf))


def test_grids_are_read_only():
    g = FeatureGrid(np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        g.data[0, 0, 0] = 1.0


def test_feature_grid_cell_order_is_row_major():
    data = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)
    g = FeatureGrid(data)
    assert g.shape == (2, 2, 3)
    np.testing.assert_array_equal(g.cell(4), data[1, 1])
    np.testing.assert_array_equal(FeatureGrid.from_chw(np.moveaxis(data, -1, 0)).data, data)


def test_sparse_cells_require_ascending_indices():
    with pytest.raises(ShapeMismatchError):
        SparseCells(np.array([3, 1]), np.zeros((2, 4)))
    cells = SparseCells(np.array([1, 3]), np.ones((2, 4)))
    assert cells.count == 2 and cells.channels == 4
    assert SparseCells.empty(8).count == 0


def test_cell_mask_set_operations():
    a = CellMask.from_indices(2, 2, [0, 1])
    b = CellMask.from_indices(2, 2, [1, 3])
    assert (a | b).indices() == [0, 1, 3]
    assert (a & b).indices() == [1]
    assert (a - b).indices() == [0]
    assert (~a).indices() == [2, 3]


# ============================================================================
# NORMALIZATION & SELECTION
# ============================================================================

@pytest.mark.parametrize("values, expected", [
    ([0, 2, 4], [0, 0.5, 1]),
    ([7, 7, 7], [0, 0, 0]),
    ([-1, 0, 3], [0, 0.25, 1]),
])
def test_minmax_normalize(values, expected):
    np.testing.assert_allclose(minmax_normalize(row(values)).flat(), expected)


def test_minmax_normalize_range_and_idempotence(rng):
    for _ in range(50):
        g = ScalarGrid(rng.normal(size=(4, 7)) * 100)
        out = minmax_normalize(g)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0
        np.testing.assert_allclose(minmax_normalize(out).data, out.data, atol=1e-15)


def test_topk_examples():
    everything = CellMask.full(1, 4)
    assert topk_cells(row([9, 1, 5, 5]), 2, everything) == [0, 2]
    assert topk_cells(row([9, 1, 5, 5]), 0, everything) == []
    assert topk_cells(row([3, 3, 3]), 2, CellMask.full(1, 3)) == [0, 1]


def test_topk_insufficient_cells():
    with pytest.raises(InsufficientCellsError, match="insufficient eligible cells"):
        topk_cells(row([1, 2, 3]), 2, CellMask.from_indices(1, 3, [1]))


def test_topk_matches_brute_force_sort(rng):
    for _ in range(200):
        h, w = rng.integers(1, 17, size=2)
        # coarse scores so ties are frequent
        score = ScalarGrid(rng.integers(0, 5, size=(h, w)).astype(float))
        eligible = CellMask(rng.random((h, w)) < 0.6)
        k = int(rng.integers(0, eligible.popcount() + 1))
        expected = sorted(eligible.indices(), key=lambda i: (-score.flat()[i], i))[:k]
        assert topk_cells(score, k, eligible) == expected


def test_ratio_count_floors():
    assert ratio_count(0.01, 176 * 48) == 84
    assert ratio_count(0.1, 8448) == 844
    assert ratio_count(1.0, 100) == 100
    assert ratio_count(0.0, 100) == 0


# ============================================================================
# SIMILARITY & LAYER NORM
# ============================================================================

def test_cosine_similarity_examples():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(0.7071, abs=1e-4)
    assert cosine_similarity([0, 0], [1, 0]) == 0.0
    with pytest.raises(ShapeMismatchError):
        cosine_similarity([1, 2], [1, 2, 3])


def test_layer_norm_examples():
    np.testing.assert_allclose(layer_norm(np.array([5.0, 5, 5, 5]), 1e-5), 0.0, atol=1e-12)
    np.testing.assert_allclose(layer_norm(np.array([1.0, -1.0]), 1e-12), [1.0, -1.0], atol=1e-6)
    np.testing.assert_allclose(layer_norm(np.array([0.0, 2.0]), 1e-5), [-1.0, 1.0], atol=1e-5)


def test_layer_norm_statistics(rng):
    v = rng.normal(size=(100, 16)) * 5 + 3
    out = layer_norm(v, 1e-9)
    assert np.abs(out.mean(axis=-1)).max() < 1e-6
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-4


def test_layer_norm_grid_zeroes_uncovered_cells(random_grid):
    g = random_grid(4, 2, 2)
    mask = CellMask.from_indices(2, 2, [0])
    out = layer_norm_grid(g, 1e-5, mask)
    assert np.count_nonzero(out.cell_vectors()[1:]) == 0
    assert np.abs(out.cell(0)).sum() > 0


# ============================================================================
# KERNELS
# ============================================================================

def test_apply_linear_examples(random_grid):
    g = random_grid(3, 2, 2)
    np.testing.assert_array_equal(apply_linear(LinearMap.identity(3), g).data, g.data)
    out = apply_linear(LinearMap.zeros(2, 3, bias=0.5), g)
    np.testing.assert_array_equal(out.data, np.full((2, 2, 2), 0.5))
    m = LinearMap(np.array([[1.0, 1.0], [0.0, 2.0]]), np.zeros(2))
    cell = FeatureGrid(np.array([[[3.0, 4.0]]]))
    np.testing.assert_array_equal(apply_linear(m, cell).cell(0), [7.0, 8.0])
    with pytest.raises(ShapeMismatchError):
        apply_linear(LinearMap.identity(2), g)


def test_conv_delta_kernel_is_identity(rng):
    for _ in range(10):
        g = FeatureGrid(rng.normal(size=(5, 4, 3)))
        np.testing.assert_array_equal(conv2d_3x3(g, delta_kernel(3)).data, g.data)


def test_conv_zero_and_averaging_kernels():
    one_hot = np.zeros((4, 4, 1))
    one_hot[0, 0, 0] = 1.0
    g = FeatureGrid(one_hot)
    assert not conv2d_3x3(g, np.zeros((1, 1, 3, 3))).data.any()
    out = conv2d_3x3(g, np.full((1, 1, 3, 3), 1.0 / 9.0)).data[..., 0]
    expected = np.zeros((4, 4))
    expected[:2, :2] = 1.0 / 9.0
    np.testing.assert_allclose(out, expected)


def test_bilinear_sample_examples():
    data = np.array([[[1.0], [3.0]], [[5.0], [7.0]]])
    g = FeatureGrid(data)
    np.testing.assert_array_equal(bilinear_sample(g, 1, 0), [3.0])
    np.testing.assert_allclose(bilinear_sample(g, 0.5, 0), [2.0])
    np.testing.assert_allclose(bilinear_sample(g, 0.5, 0.5), [4.0])
    np.testing.assert_array_equal(bilinear_sample(g, -5, -5), [0.0])


def test_bilinear_sample_is_linear_between_nodes(random_grid):
    g = random_grid(3, 4, 4)
    a = bilinear_sample(g, 1, 2)
    b = bilinear_sample(g, 2, 2)
    for t in (0.1, 0.25, 0.8):
        np.testing.assert_allclose(bilinear_sample(g, 1 + t, 2), (1 - t) * a + t * b, atol=1e-12)


def test_cellwise_max_examples(random_grid):
    g = FeatureGrid(np.abs(random_grid(2, 3, 3).data))
    np.testing.assert_array_equal(cellwise_max([g]).data, g.data)
    np.testing.assert_array_equal(cellwise_max([g, FeatureGrid(-g.data)]).data, g.data)
    a = FeatureGrid(np.array([[[1.0, 5.0]]]))
    b = FeatureGrid(np.array([[[4.0, 2.0]]]))
    np.testing.assert_array_equal(cellwise_max([a, b]).cell(0), [4.0, 5.0])
    with pytest.raises(ValueError, match="no inputs"):
        cellwise_max([])
    with pytest.raises(ShapeMismatchError):
        cellwise_max([a, g])


def test_cellwise_max_set_semantics(random_grid):
    a, b, c = random_grid(), random_grid(), random_grid()
    np.testing.assert_array_equal(cellwise_max([a, b]).data, cellwise_max([b, a]).data)
    np.testing.assert_array_equal(
        cellwise_max([cellwise_max([a, b]), c]).data, cellwise_max([a, cellwise_max([b, c])]).data
    )
    np.testing.assert_array_equal(cellwise_max([a, a]).data, a.data)


def test_gather_scatter_restore_listed_cells(random_grid):
    g = random_grid(3, 4, 4)
    idx = [1, 5, 9]
    out = scatter_cells(3, 4, 4, idx, gather_cells(g, idx))
    np.testing.assert_array_equal(out.cell_vectors()[idx], g.cell_vectors()[idx])
    assert np.count_nonzero(np.delete(out.cell_vectors(), idx, axis=0)) == 0
