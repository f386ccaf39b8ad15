"""
Scene Models
============
Pydantic models for synthetic BEV scenes and their generation parameters.
All geometry lives in one global cell frame: row y grows downward, column x
grows rightward, and cell (y, x) covers [x, x+1) x [y, y+1).
"""

from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator


class Rect(BaseModel):
    """Axis-aligned cell rectangle, half-open: rows y0..y1-1, cols x0..x1-1"""
    y0: int = Field(..., ge=0)
    x0: int = Field(..., ge=0)
    y1: int = Field(..., ge=1)
    x1: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.y1 <= self.y0 or self.x1 <= self.x0:
            raise ValueError(f"empty rectangle ({self.y0},{self.x0})-({self.y1},{self.x1})")
        return self

    def contains(self, y: float, x: float) -> bool:
        return self.y0 <= y < self.y1 and self.x0 <= x < self.x1

    def overlaps(self, other: "Rect", margin: int = 0) -> bool:
        return not (
            self.y1 + margin <= other.y0 or other.y1 + margin <= self.y0
            or self.x1 + margin <= other.x0 or other.x1 + margin <= self.x0
        )

    def within(self, height: int, width: int) -> bool:
        return self.y1 <= height and self.x1 <= width


class AgentPose(BaseModel):
    """Sensor position in continuous cell coordinates plus heading in radians"""
    y: float = Field(..., ge=0.0)
    x: float = Field(..., ge=0.0)
    heading: float = 0.0

    @property
    def cell(self) -> Tuple[int, int]:
        return (int(self.y), int(self.x))


class SceneSpec(BaseModel):
    """Targets, occluders and agent poses on one H x W plane"""
    height: int = Field(..., ge=1, le=0xFFFF)
    width: int = Field(..., ge=1, le=0xFFFF)
    meters_per_cell: float = Field(default=1.6, gt=0.0)
    objects: List[Rect] = Field(default_factory=list)
    occluders: List[Rect] = Field(default_factory=list)
    agents: List[AgentPose] = Field(default_factory=list)
    seed: int = 0

    @model_validator(mode="after")
    def _check_extent(self):
        for kind, rects in (("object", self.objects), ("occluder", self.occluders)):
            for i, rect in enumerate(rects):
                if not rect.within(self.height, self.width):
                    raise ValueError(f"{kind} {i} lies outside the {self.height}x{self.width} extent")
        for i, agent in enumerate(self.agents):
            if agent.y >= self.height or agent.x >= self.width:
                raise ValueError(f"agent {i} lies outside the {self.height}x{self.width} extent")
        return self

    def target_mask(self) -> np.ndarray:
        mask = np.zeros((self.height, self.width), dtype=bool)
        for rect in self.objects:
            mask[rect.y0:rect.y1, rect.x0:rect.x1] = True
        return mask

    def object_labels(self) -> np.ndarray:
        """Per-cell object index, -1 outside every target"""
        labels = np.full((self.height, self.width), -1, dtype=np.int64)
        for i, rect in enumerate(self.objects):
            labels[rect.y0:rect.y1, rect.x0:rect.x1] = i
        return labels

    def obstacle_mask(self) -> np.ndarray:
        """Cells that stop a ray: targets and occluders"""
        mask = self.target_mask()
        for rect in self.occluders:
            mask[rect.y0:rect.y1, rect.x0:rect.x1] = True
        return mask


class SceneParams(BaseModel):
    """Scene generation and sensing parameters"""
    object_count_min: int = Field(default=2, ge=0, le=64)
    object_count_max: int = Field(default=6, ge=0, le=64)
    object_size_min: int = Field(default=2, ge=1, le=32)
    object_size_max: int = Field(default=4, ge=1, le=32)
    occluder_count: int = Field(default=3, ge=0, le=64)
    occluder_length_min: int = Field(default=4, ge=1, le=256)
    occluder_length_max: int = Field(default=10, ge=1, le=256)
    agents: int = Field(default=2, ge=1, le=5, description="Collaborating vehicles, at most 5")
    max_retries: int = Field(default=200, ge=1, le=100000)
    n_rays: int = Field(default=720, ge=1, le=100000)
    ray_step: float = Field(default=0.25, gt=0.0, le=1.0, description="March step in cells")
    ring_ranges: List[float] = Field(default_factory=lambda: [6.0, 12.0, 24.0])
    noise_sigma: float = Field(default=0.05, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.object_count_max < self.object_count_min:
            raise ValueError("object_count_max must be >= object_count_min")
        if self.object_size_max < self.object_size_min:
            raise ValueError("object_size_max must be >= object_size_min")
        if self.occluder_length_max < self.occluder_length_min:
            raise ValueError("occluder_length_max must be >= occluder_length_min")
        if any(r <= 0 for r in self.ring_ranges):
            raise ValueError("ring_ranges must be positive")
        return self
