"""Configuration, scene and metric models"""

from models.experiment import ExperimentConfig, experiment_from_dict, load_experiment_config
from models.metrics import BandwidthRow, CurriculumRow, FusionMetrics, MetricRow
from models.scene import AgentPose, Rect, SceneParams, SceneSpec

__all__ = [
    # Experiment configuration
    "ExperimentConfig",
    "experiment_from_dict",
    "load_experiment_config",

    # Metric rows
    "BandwidthRow",
    "CurriculumRow",
    "FusionMetrics",
    "MetricRow",

    # Scenes
    "AgentPose",
    "Rect",
    "SceneParams",
    "SceneSpec",
]
