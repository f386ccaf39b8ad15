"""
Tests for curricular background pruning (pipeline/cbp.py)
"""

import time

import numpy as np
import pytest

from pipeline.cbp import (
    CurriculumState,
    compose_shared,
    curriculum_step,
    inference_state,
    initial_state,
    mine_bg,
    schedule_ratio,
)
from pipeline.fca import ConfidenceGrid
from utils.tensor_core import CellMask, FeatureGrid, ScalarGrid


def brute_force_mining(f, density, conf, fg, r, tau):
    """Every step spelled out with full sorts and per-cell similarity"""
    h, w = fg.height, fg.width
    n = h * w
    vectors = f.data.reshape(n, -1)
    score = ((1.0 - conf.data) * density.data).reshape(n)
    background = [i for i in range(n) if not fg.bits.reshape(n)[i]]

    k_anchor = min(int(np.floor(r * n + 1e-9)), len(background))
    anchors = sorted(background, key=lambda i: (-score[i], i))[:k_anchor]
    if not anchors:
        return set(), set(fg.indices())
    pool = [i for i in background if i not in set(anchors)]
    k_select = min(int(np.floor(tau * n + 1e-9)), len(pool))

    anchor_vecs = vectors[anchors]
    anchor_norms = np.sqrt((anchor_vecs ** 2).sum(axis=1))
    sim = {}
    for i in pool:
        v = vectors[i]
        nv = np.sqrt((v ** 2).sum())
        sim[i] = float(np.max(anchor_vecs @ v / (anchor_norms * nv)))
    selected = sorted(pool, key=lambda i: (-sim[i], i))[:k_select]
    return set(anchors), set(fg.indices()) | set(selected)


def random_instance(rng, h, w, channels=4):
    f = FeatureGrid(rng.normal(size=(h, w, channels)))
    density = ScalarGrid(rng.random((h, w)) * 10)
    conf = ConfidenceGrid.from_array(rng.random((h, w)))
    fg = CellMask(rng.random((h, w)) < 0.2)
    return f, density, conf, fg


# ============================================================================
# MINING
# ============================================================================

def test_zero_ratios_share_foreground_only(rng):
    f, density, conf, fg = random_instance(rng, 6, 6)
    out = mine_bg(f, density, conf, fg, 0.0, 0.0)
    assert out.anchors == [] and out.selected_bg == []
    assert out.shared_mask == fg


def test_anchor_count_on_full_grid(rng):
    f, density, conf, _ = random_instance(rng, 176, 48, channels=2)
    out = mine_bg(f, density, conf, CellMask.empty(176, 48), 0.1, 0.0)
    assert len(out.anchors) == 844


def test_hand_worked_instance():
    f = FeatureGrid(np.array([[[1.0, 1.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]]))
    density = ScalarGrid(np.array([[0.0, 2.0, 1.0, 1.0]]))
    conf = ConfidenceGrid.from_array(np.array([[1.0, 0.0, 0.0, 0.5]]))
    fg = CellMask.from_indices(1, 4, [0])
    out = mine_bg(f, density, conf, fg, 0.25, 0.25)
    assert out.anchors == [1]
    assert out.selected_bg == [2]
    assert out.shared_mask.indices() == [0, 2]


def test_mean_aggregator_changes_ranking():
    # cell 3 matches one anchor exactly; cell 4 is moderately close to both
    f = FeatureGrid(np.array([[[0, 0, 1], [1, 0, 0], [0, 1, 0], [1, 0, 0], [1, 1, 0]]], dtype=float))
    density = ScalarGrid(np.array([[0.0, 5.0, 5.0, 1.0, 1.0]]))
    conf = ConfidenceGrid.from_array(np.array([[1.0, 0.0, 0.0, 0.5, 0.5]]))
    fg = CellMask.from_indices(1, 5, [0])
    by_max = mine_bg(f, density, conf, fg, 0.4, 0.2, aggregator="max")
    by_mean = mine_bg(f, density, conf, fg, 0.4, 0.2, aggregator="mean")
    assert by_max.anchors == [1, 2]
    assert by_max.selected_bg == [3]
    assert by_mean.selected_bg == [4]


def test_mining_properties(rng):
    for _ in range(1000):
        f, density, conf, fg = random_instance(rng, 12, 12)
        tau = float(rng.random() * 0.2)
        out = mine_bg(f, density, conf, fg, float(rng.random() * 0.3), tau)
        anchors, selected = set(out.anchors), set(out.selected_bg)
        fg_cells = set(fg.indices())
        assert not anchors & selected
        assert not anchors & fg_cells and not selected & fg_cells
        assert (fg - out.shared_mask).popcount() == 0
        assert out.shared_mask.popcount() <= fg.popcount() + int(np.floor(tau * 144 + 1e-9))


def test_mining_matches_brute_force(rng):
    start = time.perf_counter()
    for _ in range(1000):
        h, w = (int(v) for v in rng.integers(1, 17, size=2))
        f, density, conf, fg = random_instance(rng, h, w)
        r = float(rng.random() * 0.5)
        tau = float(rng.random() * 0.5)
        out = mine_bg(f, density, conf, fg, r, tau)
        anchors, shared = brute_force_mining(f, density, conf, fg, r, tau)
        assert set(out.anchors) == anchors
        assert set(out.shared_mask.indices()) == shared
    assert time.perf_counter() - start < 10.0


def test_mining_validates_ratios(rng):
    f, density, conf, fg = random_instance(rng, 4, 4)
    with pytest.raises(ValueError):
        mine_bg(f, density, conf, fg, 1.0, 0.0)
    with pytest.raises(ValueError):
        mine_bg(f, density, conf, fg, 0.1, -0.1)


def test_compose_shared(random_grid):
    g = random_grid(3, 3, 4)
    empty = compose_shared(g, CellMask.empty(3, 4))
    assert empty.count == 0
    assert compose_shared(g, CellMask.full(3, 4)).count == 12
    cells = compose_shared(g, CellMask.from_indices(3, 4, [7, 3]))
    assert cells.indices.tolist() == [3, 7]
    np.testing.assert_array_equal(cells.vectors, g.cell_vectors()[[3, 7]])


# ============================================================================
# SCHEDULE
# ============================================================================

def test_schedule_values():
    s = initial_state(0.1, 0.8, 5)
    trace = []
    for _ in range(25):
        trace.append(s.r_current)
        s = curriculum_step(s)
    assert trace[:5] == [0.1] * 5
    assert trace[5] == pytest.approx(0.08, abs=1e-12)
    assert trace[10] == pytest.approx(0.064, abs=1e-12)
    assert all(r == 0.0 for r in trace[20:])
    assert all(a >= b for a, b in zip(trace, trace[1:]))


def test_schedule_closed_form():
    s = initial_state(0.1, 0.8, 5, final_cutoff_epoch=20)
    for e in range(30):
        expected = 0.1 * 0.8 ** (e // 5) if e < 20 else 0.0
        assert abs(s.r_current - expected) <= 1e-12
        assert s.epoch == e
        s = curriculum_step(s)


def test_constant_schedule_without_cutoff():
    s = initial_state(0.1, 1.0, 5, cutoff=False)
    for _ in range(50):
        assert s.r_current == 0.1
        s = curriculum_step(s)


def test_state_rejects_inconsistent_ratio():
    with pytest.raises(ValueError):
        CurriculumState(epoch=5, r0=0.1, gamma=0.8, period=5, r_current=0.1, final_cutoff_epoch=20)


def test_inference_state_disables_background():
    s = inference_state()
    assert s.r_current == 0.0 and s.tau == 0.0
    assert not s.background_active
    assert schedule_ratio(0.1, 0.8, 5, 3, None) == pytest.approx(0.1)
