"""
Metric Models
=============
Pydantic models for proxy metrics and the CSV rows every experiment emits.
Column order of each table is fixed per schema version.
"""

from typing import List

from pydantic import BaseModel, Field

SCHEMA_VERSION = 1

SWEEP_COLUMNS: List[str] = [
    "seed", "epoch", "agent", "strategy", "ratio",
    "recall", "precision", "iou", "mean_fg_act", "mean_bg_act",
    "bits_sent", "bits_received", "rejected_msgs",
]

CURRICULUM_COLUMNS: List[str] = [
    "pace", "r0", "gamma", "epoch", "r_current", "fg_cells", "bg_selected", "shared_cells",
]

BANDWIDTH_COLUMNS: List[str] = [
    "ratio", "model", "cells", "channels", "bits_per_message", "bytes_per_message",
    "bits_per_round", "mbps", "within_link_limit", "ordering_holds",
]


class FusionMetrics(BaseModel):
    """Proxy foreground-localization metrics of one activation map"""
    recall: float = Field(..., ge=0.0, le=1.0)
    precision: float = Field(..., ge=0.0, le=1.0)
    iou: float = Field(..., ge=0.0, le=1.0)
    mean_fg_act: float = Field(..., ge=0.0, le=1.0)
    mean_bg_act: float = Field(..., ge=0.0, le=1.0)


class MetricRow(BaseModel):
    """One sweep row (seed x epoch x agent x strategy x ratio)"""
    seed: int
    epoch: int = Field(..., ge=0)
    agent: int = Field(..., ge=0)
    strategy: str
    ratio: float = Field(..., gt=0.0, le=1.0)
    recall: float
    precision: float
    iou: float
    mean_fg_act: float
    mean_bg_act: float
    bits_sent: int = Field(..., ge=0)
    bits_received: int = Field(..., ge=0)
    rejected_msgs: int = Field(..., ge=0)

    def sort_key(self):
        return (self.seed, self.epoch, self.agent, self.strategy, self.ratio)


class CurriculumRow(BaseModel):
    pace: int = Field(..., ge=0)
    r0: float
    gamma: float
    epoch: int = Field(..., ge=0)
    r_current: float = Field(..., ge=0.0)
    fg_cells: int = Field(..., ge=0)
    bg_selected: int = Field(..., ge=0)
    shared_cells: int = Field(..., ge=0)


class BandwidthRow(BaseModel):
    ratio: float
    model: str
    cells: int
    channels: int
    bits_per_message: int
    bytes_per_message: float
    bits_per_round: int
    mbps: float
    within_link_limit: bool
    ordering_holds: bool
