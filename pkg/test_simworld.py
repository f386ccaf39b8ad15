"""
Tests for the synthetic world: scenes, ray-cast observations, sharing
strategies, proxy scoring and full collaboration rounds
"""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import small_config_dict
from models.experiment import experiment_from_dict
from models.scene import AgentPose, Rect, SceneParams, SceneSpec
from pipeline.fca import refine_confidence, select_foreground
from simworld.observe import cast_rays, observe
from simworld.round import RoundOrchestrator, curriculum_for, run_round
from simworld.scene import build_occlusion_scene, generate_scene, load_scene, save_scene
from simworld.scoring import activation_map, score_activation, score_fused
from simworld.strategies import strategy_mask
from utils.errors import ConfigError, SceneGenerationError
from utils.tensor_core import CellMask, FeatureGrid, ScalarGrid, ratio_count


def occlusion_config(**pipeline):
    data = small_config_dict(mode="infer")
    data["pipeline"].update({"attention": "identity", "fusion": "gated_identity", **pipeline})
    data["scene"]["noise_sigma"] = 0.0
    return experiment_from_dict(data)


def adjacent_target_scene() -> SceneSpec:
    return SceneSpec(
        height=8,
        width=8,
        objects=[Rect(y0=3, x0=4, y1=5, x1=6)],
        agents=[AgentPose(y=3.5, x=3.5)],
    )


# ============================================================================
# SCENES
# ============================================================================

def test_generate_scene_is_deterministic():
    params = SceneParams()
    assert generate_scene(params, seed=4) == generate_scene(params, seed=4)
    assert generate_scene(params, seed=4) != generate_scene(params, seed=5)


def test_generated_scene_layout():
    params = SceneParams(agents=5)
    for seed in range(10):
        scene = generate_scene(params, seed=seed)
        assert (scene.height, scene.width) == (176, 48)
        assert len(scene.agents) == 5
        assert len({agent.cell for agent in scene.agents}) == 5
        assert params.object_count_min <= len(scene.objects) <= params.object_count_max
        blocked = scene.obstacle_mask()
        assert not any(blocked[agent.cell] for agent in scene.agents)
        for i, a in enumerate(scene.objects):
            for b in scene.objects[i + 1:]:
                assert not a.overlaps(b)


def test_scene_without_objects():
    scene = generate_scene(SceneParams(object_count_min=0, object_count_max=0), seed=1)
    assert scene.objects == []
    assert not scene.target_mask().any()


def test_generation_failure_is_reported():
    params = SceneParams(object_count_min=10, object_count_max=10, object_size_min=4, object_size_max=4, max_retries=5)
    with pytest.raises(SceneGenerationError, match="scene generation failed"):
        generate_scene(params, seed=0, height=6, width=6)
    with pytest.raises(SceneGenerationError):
        build_occlusion_scene(height=5, width=24)


def test_scene_rejects_geometry_outside_extent():
    with pytest.raises(ValidationError):
        SceneSpec(height=4, width=4, objects=[Rect(y0=2, x0=2, y1=6, x1=3)])
    with pytest.raises(ValidationError):
        SceneSpec(height=4, width=4, agents=[AgentPose(y=1.0, x=4.5)])


def test_scene_file_round_trip(tmp_path):
    scene = generate_scene(SceneParams(), seed=7)
    path = save_scene(scene, tmp_path / "scenes" / "seed7.json")
    assert load_scene(path) == scene


def test_scene_file_errors_carry_field_path(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"height": 4, "width": 0}), encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_scene(path)
    assert info.value.field_path == "width"


def test_occlusion_scene_puts_wall_between_receiver_and_target():
    for seed in range(20):
        scene = build_occlusion_scene(seed=seed)
        wall = scene.occluders[0]
        receiver, helper = scene.agents
        assert receiver.x < wall.x0 < scene.objects[0].x0
        assert helper.x > scene.objects[0].x1


# ============================================================================
# OBSERVATION
# ============================================================================

def test_adjacent_target_is_fully_visible():
    scene = adjacent_target_scene()
    obs = observe(scene, 0, n_rays=360, channels=8, noise_sigma=0.0, ring_ranges=())
    target = obs.gt_fg.bits
    np.testing.assert_allclose(obs.visibility.data[target], 1.0)
    assert obs.conf.data[target].max() == pytest.approx(1.0)
    assert np.abs(obs.features.data[target]).min() >= 0.5


def test_target_behind_wall_is_invisible():
    scene = build_occlusion_scene(seed=3)
    obs = observe(scene, 0, n_rays=720, channels=8, noise_sigma=0.0, ring_ranges=())
    target = obs.gt_fg.bits
    assert not obs.visibility.data[target].any()
    assert not obs.conf.data[target].any()
    assert not obs.features.data.any()

    helper = observe(scene, 1, n_rays=720, channels=8, noise_sigma=0.0, ring_ranges=())
    assert helper.visibility.data[target].min() > 0.0


def test_noise_free_empty_scene_has_zero_features():
    scene = SceneSpec(height=10, width=10, agents=[AgentPose(y=5.5, x=5.5)])
    obs = observe(scene, 0, n_rays=90, channels=4, noise_sigma=0.0)
    assert not obs.features.data.any()
    assert not obs.conf.data.any()


def test_noise_stays_within_sigma():
    scene = SceneSpec(height=10, width=10, agents=[AgentPose(y=5.5, x=5.5)])
    obs = observe(scene, 0, n_rays=90, channels=4, noise_sigma=0.05)
    assert np.abs(obs.features.data).max() <= 0.05


def test_ring_beams_land_on_the_ground():
    scene = SceneSpec(height=20, width=20, agents=[AgentPose(y=10.5, x=10.5)])
    cast = cast_rays(scene, 0, n_rays=36, step=0.25, ring_ranges=[2.0])
    assert cast.density.sum() == 36
    assert cast_rays(scene, 0, n_rays=36, ring_ranges=[]).density.sum() == 0


def test_cast_rays_validates_arguments():
    scene = adjacent_target_scene()
    with pytest.raises(IndexError):
        cast_rays(scene, 1, n_rays=10)
    with pytest.raises(ValueError):
        cast_rays(scene, 0, n_rays=0)


def test_returns_only_land_on_visible_cells():
    params = SceneParams(agents=3)
    for seed in range(30):
        scene = generate_scene(params, seed=seed, height=24, width=24)
        for i in range(len(scene.agents)):
            obs = observe(scene, i, n_rays=180, channels=4, ring_ranges=(4.0, 8.0))
            hit = obs.density.data > 0
            assert (obs.visibility.data[hit] > 0).all(), (seed, i)


def test_ground_truth_masks_partition_the_plane():
    scene = generate_scene(SceneParams(), seed=2, height=24, width=24)
    obs = observe(scene, 0, n_rays=90, channels=4)
    assert (obs.gt_fg | obs.gt_bg) == CellMask.full(24, 24)
    assert (obs.gt_fg & obs.gt_bg).popcount() == 0


# ============================================================================
# STRATEGIES
# ============================================================================

def test_strategy_masks():
    scene = generate_scene(SceneParams(), seed=2, height=24, width=24)
    obs = observe(scene, 0, n_rays=180, channels=4)
    assert strategy_mask("gt_fg", obs, 0.05) == obs.gt_fg
    all_bg = strategy_mask("gt_bg", obs, 1.0)
    assert all_bg == obs.gt_bg
    assert (obs.gt_fg | all_bg) == CellMask.full(24, 24)
    assert strategy_mask("pred_fg", obs, 0.1).popcount() == ratio_count(0.1, 576) == 57
    dense = strategy_mask("gt_bg", obs, 0.05)
    assert dense.popcount() == ratio_count(0.05, 576)
    assert (dense & obs.gt_fg).popcount() == 0


def test_strategy_rejects_unknown_kind_and_ratio():
    obs = observe(adjacent_target_scene(), 0, n_rays=36, channels=4)
    with pytest.raises(ValueError, match="unknown strategy"):
        strategy_mask("everything", obs, 0.1)
    with pytest.raises(ValueError):
        strategy_mask("gt_fg", obs, 0.0)


# ============================================================================
# SCORING
# ============================================================================

def test_score_activation_example():
    act = ScalarGrid(np.array([[1.0, 0.6, 0.2, 0.0]]))
    metrics = score_activation(act, CellMask.from_indices(1, 4, [0, 2]))
    assert metrics.recall == pytest.approx(0.5)
    assert metrics.precision == pytest.approx(0.5)
    assert metrics.iou == pytest.approx(1 / 3)
    assert metrics.mean_fg_act == pytest.approx(0.6)
    assert metrics.mean_bg_act == pytest.approx(0.3)


def test_zero_denominators_score_zero():
    flat = activation_map(FeatureGrid(np.ones((2, 2, 3))))
    assert not flat.data.any()
    metrics = score_activation(flat, CellMask.empty(2, 2))
    assert (metrics.recall, metrics.precision, metrics.iou, metrics.mean_fg_act) == (0.0, 0.0, 0.0, 0.0)


def test_activation_map_is_normalized_norm():
    data = np.zeros((1, 3, 2))
    data[0, 1] = [3.0, 4.0]
    data[0, 2] = [0.0, 2.5]
    np.testing.assert_allclose(activation_map(FeatureGrid(data)).data, [[0.0, 1.0, 0.5]])
    metrics = score_fused(FeatureGrid(data), CellMask.from_indices(1, 3, [1]))
    assert (metrics.recall, metrics.precision, metrics.iou) == (1.0, 0.5, 0.5)
    assert score_fused(FeatureGrid(data), CellMask.from_indices(1, 3, [1]), act_threshold=0.75).precision == 1.0


# ============================================================================
# ROUNDS
# ============================================================================

def test_single_agent_matches_baseline():
    data = small_config_dict()
    data["scene"]["agents"] = 1
    config = experiment_from_dict(data)
    scene = generate_scene(config.scene, seed=0, height=24, width=24)
    result = run_round(scene, config)
    art = result.artifact(0)
    assert art.metrics == art.baseline
    row = result.rows[0]
    assert (row.bits_sent, row.bits_received, row.rejected_msgs) == (0, 0, 0)


def test_zero_budget_matches_baseline():
    data = small_config_dict()
    data["scene"]["agents"] = 3
    config = experiment_from_dict({**data, "budget_bits": 0})
    scene = generate_scene(config.scene, seed=1, height=24, width=24)
    result = run_round(scene, config)
    for art, row in zip(result.artifacts, result.rows):
        assert art.metrics == art.baseline
        np.testing.assert_array_equal(art.post_fusion.data, art.pre_fusion.data)
        assert row.bits_received == 0 and row.bits_sent == 0
        assert row.rejected_msgs == 2


def test_budget_is_never_exceeded():
    data = small_config_dict(budget_bits=3_000)
    data["scene"]["agents"] = 4
    data["pipeline"]["strategies"] = ["pred_fg"]
    config = experiment_from_dict(data)
    for seed in range(5):
        scene = generate_scene(config.scene, seed=seed, height=24, width=24)
        result = run_round(scene, config, ratio=0.05)
        for i in range(4):
            assert result.ledger.inbound(i) <= 3_000
            assert result.rows[i].bits_received <= 3_000
            assert result.rows[i].bits_sent == result.ledger.outbound(i)
            accepted = [e for e in result.memory.get_messages(sender=i) if e.accepted]
            assert result.rows[i].bits_sent == sum(e.bits for e in accepted)
        assert sum(r.bits_sent for r in result.rows) == sum(r.bits_received for r in result.rows)


def test_exchange_admits_in_receiver_then_sender_order():
    data = small_config_dict()
    data["scene"]["agents"] = 3
    config = experiment_from_dict(data)
    scene = generate_scene(config.scene, seed=0, height=24, width=24)
    result = run_round(scene, config)
    pairs = [(e.receiver, e.sender) for e in result.memory.get_messages()]
    assert pairs == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]


def test_occluded_target_recovered_through_fusion():
    config = occlusion_config()
    improved = 0
    for seed in range(50):
        result = run_round(build_occlusion_scene(seed=seed), config)
        receiver = result.artifact(0)
        assert receiver.metrics.recall >= receiver.baseline.recall
        improved += receiver.metrics.recall > receiver.baseline.recall
    assert improved >= 45


def pred_fg_config(mode: str):
    data = small_config_dict(mode=mode)
    data["pipeline"]["strategies"] = ["pred_fg"]
    return experiment_from_dict(data)


def test_inference_shares_foreground_only():
    config = pred_fg_config("infer")
    orchestrator = RoundOrchestrator.from_config(config)
    state = curriculum_for(config, train=False)
    for seed in range(100):
        scene = generate_scene(config.scene, seed=seed, height=24, width=24)
        observations = orchestrator.observe_all(scene)
        infer = orchestrator.run(scene, observations, "pred_fg", 0.05, state, train=False)
        for i, obs in enumerate(observations):
            expected = select_foreground(refine_confidence(obs.conf, obs.density), 0.05)
            assert infer.artifact(i).shared_mask == expected, (seed, i)
            assert infer.memory.get_agent_record(i).bg_selected == 0


def test_training_adds_background_to_the_inference_mask():
    config = pred_fg_config("train")
    scene = generate_scene(config.scene, seed=3, height=24, width=24)
    orchestrator = RoundOrchestrator.from_config(config)
    observations = orchestrator.observe_all(scene)

    infer = orchestrator.run(scene, observations, "pred_fg", 0.05, curriculum_for(config, train=False), train=False)
    train = orchestrator.run(scene, observations, "pred_fg", 0.05, curriculum_for(config, train=True), train=True)
    for i in range(len(observations)):
        assert (infer.artifact(i).shared_mask - train.artifact(i).shared_mask).popcount() == 0
        assert train.artifact(i).shared_mask.popcount() > infer.artifact(i).shared_mask.popcount()


def test_background_strategy_never_shares_foreground_while_training():
    config = experiment_from_dict(small_config_dict())
    orchestrator = RoundOrchestrator.from_config(config)
    state = curriculum_for(config, train=True)
    mined = 0
    for seed in range(10):
        scene = generate_scene(config.scene, seed=seed, height=24, width=24)
        observations = orchestrator.observe_all(scene)
        result = orchestrator.run(scene, observations, "gt_bg", 0.05, state, train=True)
        for i, obs in enumerate(observations):
            shared = result.artifact(i).shared_mask
            assert (shared & obs.gt_fg).popcount() == 0, (seed, i)
            assert (strategy_mask("gt_bg", obs, 0.05) - shared).popcount() == 0
            mined += result.memory.get_agent_record(i).bg_selected
    assert mined > 0


def test_mined_cells_are_counted_once_per_strategy():
    config = experiment_from_dict(small_config_dict())
    scene = generate_scene(config.scene, seed=1, height=24, width=24)
    orchestrator = RoundOrchestrator.from_config(config)
    observations = orchestrator.observe_all(scene)
    for strategy in ("pred_fg", "gt_fg", "gt_bg"):
        result = orchestrator.run(scene, observations, strategy, 0.05, curriculum_for(config, True), train=True)
        for i, obs in enumerate(observations):
            record = result.memory.get_agent_record(i)
            base = strategy_mask(strategy, obs, 0.05, refine_confidence(obs.conf, obs.density))
            assert record.shared_cells == base.popcount() + record.bg_selected


def test_rows_follow_agent_order_and_report_seed():
    config = experiment_from_dict(small_config_dict())
    scene = generate_scene(config.scene, seed=0, height=24, width=24)
    orchestrator = RoundOrchestrator.from_config(config)
    result = orchestrator.run(
        scene, orchestrator.observe_all(scene), "gt_fg", 0.1, curriculum_for(config, True), seed=9, epoch=4
    )
    assert [r.agent for r in result.rows] == [0, 1]
    assert all(r.seed == 9 and r.epoch == 4 and r.ratio == 0.1 for r in result.rows)
