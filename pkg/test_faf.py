"""
Tests for foreground amplification fusion (pipeline/faf.py)
"""

import numpy as np
import pytest

from pipeline.faf import (
    FusionParams,
    aggregate_neighbors,
    amplify,
    max_fuse,
    merge_interaction,
    run_faf,
)
from utils.errors import ShapeMismatchError
from utils.tensor_core import CellMask, FeatureGrid, LinearMap, delta_kernel, layer_norm


def params_with(channels: int, proj_merge: LinearMap = None, proj_out: LinearMap = None) -> FusionParams:
    return FusionParams(
        ln_eps=1e-5,
        proj_r=LinearMap.identity(channels),
        proj_merge=proj_merge or LinearMap.zeros(channels, 2 * channels),
        conv_merge=delta_kernel(channels),
        proj_out=proj_out or LinearMap.identity(channels),
    )


# ============================================================================
# AGGREGATION
# ============================================================================

def test_no_neighbors_gives_zero_grid_and_empty_mask():
    fr, mask = aggregate_neighbors([], params_with(3), plane=(3, 2, 4))
    assert fr.shape == (3, 2, 4)
    assert not fr.data.any()
    assert mask.popcount() == 0
    with pytest.raises(ValueError):
        aggregate_neighbors([], params_with(3))


def test_constant_vectors_normalize_to_zero():
    grid = FeatureGrid(np.full((2, 2, 4), 3.0))
    fr, mask = aggregate_neighbors([(grid, CellMask.full(2, 2))], params_with(4))
    assert mask.popcount() == 4
    np.testing.assert_allclose(fr.data, 0.0, atol=1e-9)


def test_disjoint_masks_union(random_grid):
    a = CellMask.from_indices(3, 3, [0, 1])
    b = CellMask.from_indices(3, 3, [4, 8])
    fr, mask = aggregate_neighbors([(random_grid(2, 3, 3), a), (random_grid(2, 3, 3), b)], params_with(2))
    assert mask.popcount() == 4
    uncovered = ~mask.bits
    assert not fr.data[uncovered].any()


def test_neighbor_contributes_only_where_covered():
    big = FeatureGrid(np.full((1, 2, 2), 100.0) * np.array([1.0, -1.0]))
    small = FeatureGrid(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    # big covers only cell 0, so cell 1 must come from small alone
    fr, _ = aggregate_neighbors(
        [(big, CellMask.from_indices(1, 2, [0])), (small, CellMask.full(1, 2))], params_with(2)
    )
    expected = layer_norm(np.array([0.0, 1.0]), 1e-5)
    np.testing.assert_allclose(fr.cell(1), expected)


def test_uncovered_cells_enter_the_max_as_zero():
    a = FeatureGrid(np.array([[[-1.0, -3.0], [5.0, 5.0]]]))
    b = FeatureGrid.zeros(2, 1, 2)
    fr, mask = aggregate_neighbors(
        [(a, CellMask.from_indices(1, 2, [0])), (b, CellMask.from_indices(1, 2, [1]))],
        FusionParams.gated_identity(2),
    )
    assert mask.popcount() == 2
    # max([-1, -3], [0, 0]) is the zero vector, which normalizes to zero
    np.testing.assert_allclose(fr.cell(0), [0.0, 0.0], atol=1e-12)
    # a's uncovered [5, 5] never reaches cell 1
    np.testing.assert_allclose(fr.cell(1), [0.0, 0.0], atol=1e-12)


def test_aggregation_matches_max_of_masked_grids(rng):
    grids = [FeatureGrid(rng.normal(size=(4, 4, 3))) for _ in range(3)]
    masks = [CellMask(rng.random((4, 4)) < 0.5) for _ in range(3)]
    fr, covered = aggregate_neighbors(list(zip(grids, masks)), params_with(3))
    pooled = np.max([np.where(m.bits[..., None], g.data, 0.0) for g, m in zip(grids, masks)], axis=0)
    expected = np.where(covered.bits[..., None], layer_norm(pooled, 1e-5), 0.0)
    np.testing.assert_allclose(fr.data, expected, atol=1e-12)


def test_adding_a_covered_neighbor_never_shrinks_the_union(random_grid):
    a = CellMask.from_indices(2, 3, [0, 2, 5])
    _, first = aggregate_neighbors([(random_grid(2, 2, 3), a)], params_with(2))
    _, second = aggregate_neighbors(
        [(random_grid(2, 2, 3), a), (random_grid(2, 2, 3), CellMask.from_indices(2, 3, [2]))], params_with(2)
    )
    assert (first - second).popcount() == 0


def test_aggregate_rejects_mismatched_neighbors(random_grid):
    with pytest.raises(ShapeMismatchError):
        aggregate_neighbors(
            [(random_grid(2, 2, 2), CellMask.full(2, 2)), (random_grid(2, 3, 3), CellMask.full(3, 3))],
            params_with(2),
        )


# ============================================================================
# MERGE & AMPLIFY
# ============================================================================

def test_merge_selecting_ego_half(random_grid):
    ego = random_grid(2, 2, 2)
    fr = FeatureGrid.zeros(2, 2, 2)
    select_ego = LinearMap(np.hstack([np.eye(2), np.zeros((2, 2))]), np.zeros(2))
    merge = merge_interaction(ego, fr, params_with(2, proj_merge=select_ego))
    joined = np.concatenate([ego.data, fr.data], axis=-1)
    np.testing.assert_allclose(merge.data, layer_norm(joined, 1e-5)[..., :2], atol=1e-12)


def test_merge_zero_projection_and_constant_collapse(random_grid):
    ego = random_grid(3, 2, 2)
    merge = merge_interaction(ego, random_grid(3, 2, 2), params_with(3))
    assert not merge.data.any()

    const = FeatureGrid(np.full((2, 2, 3), 4.0))
    biased = LinearMap(np.ones((3, 6)), np.full(3, 0.5))
    merge = merge_interaction(const, const, params_with(3, proj_merge=biased))
    np.testing.assert_allclose(merge.data, 0.5, atol=1e-9)


def test_amplify_examples(random_grid):
    ego = random_grid(2, 3, 3)
    fr = random_grid(2, 3, 3)
    p = params_with(2)
    ones = FeatureGrid(np.ones((3, 3, 2)))

    same = amplify(ego, ones, fr, CellMask.empty(3, 3), p)
    np.testing.assert_array_equal(same.data, ego.data)

    opened = amplify(ego, ones, fr, CellMask.full(3, 3), p)
    np.testing.assert_allclose(opened.data, ego.data + fr.data)

    merge = FeatureGrid(np.full((3, 3, 2), 2.0))
    three = FeatureGrid(np.full((3, 3, 2), 3.0))
    one_cell = amplify(ego, merge, three, CellMask.from_indices(3, 3, [4]), p)
    diff = one_cell.cell_vectors() - ego.cell_vectors()
    np.testing.assert_allclose(diff[4], [6.0, 6.0])
    assert not np.delete(diff, 4, axis=0).any()


def test_amplify_bias_reaches_unmasked_cells(random_grid):
    ego = random_grid(2, 2, 2)
    p = params_with(2, proj_out=LinearMap(np.eye(2), np.full(2, 0.25)))
    out = amplify(ego, FeatureGrid.zeros(2, 2, 2), FeatureGrid.zeros(2, 2, 2), CellMask.empty(2, 2), p)
    np.testing.assert_allclose(out.data, ego.data + 0.25)


# ============================================================================
# FULL STAGE
# ============================================================================

def test_faf_identity_without_neighbors_or_masks(rng):
    p = FusionParams.seeded(6, seed=9)
    for _ in range(100):
        ego = FeatureGrid(rng.normal(size=(4, 5, 6)))
        np.testing.assert_array_equal(run_faf(ego, [], p).data, ego.data)
        silent = (FeatureGrid(rng.normal(size=(4, 5, 6))), CellMask.empty(4, 5))
        np.testing.assert_array_equal(run_faf(ego, [silent], p).data, ego.data)


def test_faf_touches_only_masked_cells(rng):
    p = FusionParams.seeded(4, seed=2)
    ego = FeatureGrid(rng.normal(size=(5, 5, 4)))
    mask = CellMask(rng.random((5, 5)) < 0.3)
    fused = run_faf(ego, [(FeatureGrid(rng.normal(size=(5, 5, 4))), mask)], p)
    np.testing.assert_array_equal(fused.data[~mask.bits], ego.data[~mask.bits])


def test_seeded_fusion_weights_share_one_bound():
    p = FusionParams.seeded(16, seed=5)
    bound = 1.0 / np.sqrt(16)
    for weights in (p.proj_r.weights, p.proj_r.bias, p.proj_merge.weights, p.conv_merge, p.proj_out.weights):
        assert np.abs(weights).max() <= bound
    # 2C inputs to proj_merge still draw from the full C range
    assert np.abs(p.proj_merge.weights).max() > 1.0 / np.sqrt(32)
    assert not p.proj_out.bias.any()


def test_faf_is_deterministic(rng):
    ego = FeatureGrid(rng.normal(size=(4, 4, 4)))
    msg = (FeatureGrid(rng.normal(size=(4, 4, 4))), CellMask(rng.random((4, 4)) < 0.5))
    a = run_faf(ego, [msg], FusionParams.seeded(4, seed=1))
    b = run_faf(ego, [msg], FusionParams.seeded(4, seed=1))
    np.testing.assert_array_equal(a.data, b.data)


def test_gated_identity_adds_normalized_neighbor(rng):
    ego = FeatureGrid(rng.normal(size=(3, 3, 8)))
    neighbor = FeatureGrid(rng.normal(size=(3, 3, 8)))
    mask = CellMask.from_indices(3, 3, [0, 4])
    fused = run_faf(ego, [(neighbor, mask)], FusionParams.gated_identity(8))
    expected = ego.data.copy()
    expected[mask.bits] += layer_norm(neighbor.data[mask.bits], 1e-5)
    np.testing.assert_allclose(fused.data, expected, atol=1e-12)


def test_max_fuse_uses_covered_cells_only():
    ego = FeatureGrid(np.zeros((1, 2, 1)))
    neighbor = FeatureGrid(np.array([[[5.0], [7.0]]]))
    fused = max_fuse(ego, [(neighbor, CellMask.from_indices(1, 2, [1]))])
    np.testing.assert_array_equal(fused.data[0, :, 0], [0.0, 7.0])
    np.testing.assert_array_equal(max_fuse(ego, []).data, ego.data)
