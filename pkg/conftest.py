"""
Shared test fixtures
====================
Small grids and configs so every test module runs in seconds.
"""

import numpy as np
import pytest

from models.experiment import ExperimentConfig, experiment_from_dict
from utils.tensor_core import FeatureGrid


def small_config_dict(**overrides) -> dict:
    """Reduced experiment: 24x24 grid, 32 channels, 180 rays"""
    data = {
        "name": "test",
        "grid": {"preset": "custom", "height": 24, "width": 24},
        "pipeline": {
            "channels": 32,
            "compression_ratio": 4,
            "ratios": [0.01, 0.05, 0.10],
            "strategies": ["gt_fg"],
        },
        "curriculum": {"r0": 0.1, "gamma": 0.8, "period": 5, "replay_epochs": 25},
        "scene": {
            "object_count_min": 1,
            "object_count_max": 3,
            "occluder_count": 2,
            "occluder_length_min": 3,
            "occluder_length_max": 6,
            "agents": 2,
            "n_rays": 180,
            "ring_ranges": [4.0, 8.0],
        },
        "output": {"heatmap_scale": 2},
        "seeds": [0, 1],
        "epochs": 1,
    }
    data.update(overrides)
    return data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config() -> ExperimentConfig:
    return experiment_from_dict(small_config_dict())


@pytest.fixture
def random_grid(rng):
    def make(channels: int = 4, height: int = 5, width: int = 6) -> FeatureGrid:
        return FeatureGrid(rng.normal(size=(height, width, channels)))
    return make
