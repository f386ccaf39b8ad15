"""
Experiment Configuration
========================
Pydantic models for the single JSON experiment file driving every CLI
subcommand. Defaults mirror the published method constants where one exists.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from models.scene import SceneParams
from utils.errors import ConfigError

GRID_PRESETS: Dict[str, Tuple[int, int]] = {
    "opv2v_like": (176, 48),
    "dair_like": (126, 50),
}

STRATEGIES = ("pred_fg", "gt_fg", "gt_bg")

Strategy = Literal["pred_fg", "gt_fg", "gt_bg"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Strict):
    preset: Literal["opv2v_like", "dair_like", "custom"] = "opv2v_like"
    height: Optional[int] = Field(default=None, ge=1, le=0xFFFF)
    width: Optional[int] = Field(default=None, ge=1, le=0xFFFF)
    meters_per_cell: float = Field(default=1.6, gt=0.0)

    @model_validator(mode="after")
    def _check_custom(self):
        if self.preset == "custom" and (self.height is None or self.width is None):
            raise ValueError("custom grids need both height and width")
        return self

    @property
    def dims(self) -> Tuple[int, int]:
        if self.preset == "custom":
            return (self.height, self.width)
        return GRID_PRESETS[self.preset]


class PipelineConfig(_Strict):
    channels: int = Field(default=256, ge=1, le=4096)
    compression_ratio: int = Field(default=16, ge=1, le=4096)
    ratios: List[float] = Field(default_factory=lambda: [0.01, 0.05, 0.10], min_length=1)
    strategies: List[Strategy] = Field(default_factory=lambda: ["pred_fg", "gt_fg", "gt_bg"], min_length=1)
    selection_mode: Literal["topk", "threshold"] = "topk"
    conf_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    use_fca: bool = True
    use_cbp: bool = True
    use_faf: bool = True
    num_points: int = Field(default=4, ge=1, le=64)
    attention: Literal["seeded", "identity"] = "seeded"
    fusion: Literal["seeded", "gated_identity"] = "seeded"
    ln_eps: float = Field(default=1e-5, gt=0.0, le=1.0)
    proj_out_bias: float = 0.0
    cbp_aggregator: Literal["max", "mean"] = "max"
    cbp_normalized_density: bool = False
    cbp_uses_refined: bool = True
    act_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    param_seed: int = Field(default=0, ge=0)

    @field_validator("ratios")
    @classmethod
    def _check_ratios(cls, ratios: List[float]) -> List[float]:
        for r in ratios:
            if not 0.0 < r <= 1.0:
                raise ValueError(f"ratio {r} outside (0, 1]")
        return ratios

    @model_validator(mode="after")
    def _check_compression(self):
        if self.channels % self.compression_ratio:
            raise ValueError(
                f"channels {self.channels} must be divisible by compression_ratio {self.compression_ratio}"
            )
        return self

    @property
    def compressed_channels(self) -> int:
        return self.channels // self.compression_ratio


class Pace(_Strict):
    r0: float = Field(..., ge=0.0, lt=1.0)
    gamma: float = Field(..., gt=0.0, le=1.0)


class CurriculumConfig(_Strict):
    r0: float = Field(default=0.1, ge=0.0, lt=1.0)
    gamma: float = Field(default=0.8, gt=0.0, le=1.0)
    period: int = Field(default=5, ge=1, le=10000)
    tau: float = Field(default=0.05, ge=0.0, lt=1.0)
    final_cutoff_epoch: Optional[int] = Field(default=None, ge=0, description="Defaults to 4 * period")
    cutoff: bool = Field(default=True, description="False keeps decaying without a final cutoff")
    replay_epochs: int = Field(default=25, ge=1, le=100000)
    paces: List[Pace] = Field(default_factory=list)


class BandwidthConfig(_Strict):
    rate_hz: float = Field(default=10.0, gt=0.0)
    neighbors: int = Field(default=4, ge=1, le=64)
    link_limit_mbps: float = Field(default=28.0, gt=0.0)
    models: List[Literal["dense_fp32", "sparse_fp32", "sparse_fp16_compressed"]] = Field(
        default_factory=lambda: ["dense_fp32", "sparse_fp32", "sparse_fp16_compressed"], min_length=1
    )


class OutputConfig(_Strict):
    out_dir: Path = Path("results")
    sweep_csv: str = "sweep.csv"
    curriculum_csv: str = "curriculum.csv"
    bandwidth_csv: str = "bandwidth.csv"
    heatmap_dir: str = "heatmaps"
    heatmap_scale: int = Field(default=4, ge=1, le=64)


class ExperimentConfig(_Strict):
    name: str = "fadelead"
    grid: GridConfig = Field(default_factory=GridConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    curriculum: CurriculumConfig = Field(default_factory=CurriculumConfig)
    scene: SceneParams = Field(default_factory=SceneParams)
    bandwidth: BandwidthConfig = Field(default_factory=BandwidthConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    budget_bits: int = Field(default=28_000_000, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    epochs: int = Field(default=1, ge=1, le=10000)
    mode: Literal["train", "infer"] = "train"
    parallel: int = Field(default=1, ge=1, le=64)

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, seeds: List[int]) -> List[int]:
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be unique")
        if any(s < 0 for s in seeds):
            raise ValueError("seeds must be non-negative")
        return seeds

    def with_overrides(self, **updates: Any) -> "ExperimentConfig":
        """Validated copy with top-level fields replaced (CLI flags)"""
        data = self.model_dump()
        data.update({k: v for k, v in updates.items() if v is not None})
        return experiment_from_dict(data)


# ============================================================================
# LOADING
# ============================================================================

def _field_path(loc: Tuple[Union[str, int], ...]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def experiment_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a mapping, converting the first validation error into ConfigError"""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        path = _field_path(first["loc"])
        raise ConfigError(f"{first['msg']} (got {first.get('input')!r})", field_path=path) from e


def load_experiment_config(path: Optional[Union[str, Path]]) -> ExperimentConfig:
    """Read a JSON config file; None gives the defaults"""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror or e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    return experiment_from_dict(data)
