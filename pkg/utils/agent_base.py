"""
Base Agent Classes and Interfaces
=================================
Abstract base class for collaborating vehicle (CAV) agents. Every agent
turns its observation into a sparse message and fuses the messages it was
admitted to receive. Uses Pydantic for configuration and share records.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from utils.tensor_core import CellMask, FeatureGrid


class AgentConfig(BaseModel):
    """Configuration for one collaborating agent"""
    agent_id: int = Field(..., ge=0, le=0xFFFFFFFF, description="Wire agent id")
    name: str = Field(default="", description="Display name")
    channels: int = Field(default=256, ge=1, description="BEV feature channels C")
    compression_ratio: int = Field(default=16, ge=1, description="Channel compression R")
    use_fca: bool = True
    use_cbp: bool = True
    use_faf: bool = True
    selection_mode: Literal["topk", "threshold"] = "topk"
    conf_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    num_points: int = Field(default=4, ge=1, description="Deformable sampling points K")
    attention: Literal["seeded", "identity"] = "seeded"
    fusion: Literal["seeded", "gated_identity"] = "seeded"
    ln_eps: float = Field(default=1e-5, gt=0.0)
    proj_out_bias: float = 0.0
    cbp_aggregator: Literal["max", "mean"] = "max"
    cbp_normalized_density: bool = False
    cbp_uses_refined: bool = True
    param_seed: int = Field(default=0, ge=0, description="Seed of every generated weight")
    capabilities: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_channels(self):
        if self.channels % self.compression_ratio:
            raise ValueError("channels must be divisible by compression_ratio")
        if not self.name:
            self.name = f"cav-{self.agent_id}"
        return self

    @property
    def compressed_channels(self) -> int:
        return self.channels // self.compression_ratio


@dataclass(frozen=True, eq=False)
class SharePlan:
    """Everything an agent decided to share this round"""
    agent_id: int
    ego: FeatureGrid
    fg_mask: CellMask
    shared_mask: CellMask
    anchors: List[int]
    selected_bg: List[int]
    payload: bytes
    size_bits: int

    @property
    def shared_cells(self) -> int:
        return self.shared_mask.popcount()


class BaseCollaborativeAgent(ABC):
    """
    Abstract base class for all collaborating agents.
    Enforces one interface for sharing and fusion across pipeline variants.
    """

    def __init__(self, config: AgentConfig):
        self.config = config
        self.agent_id = config.agent_id
        self.name = config.name
        self.logger = logging.getLogger(f"fadelead.agent.{self.name}")
        self._is_initialized = False

    @abstractmethod
    def initialize(self) -> bool:
        """
        Build the agent's parameters.
        Returns True if successful.
        """

    @abstractmethod
    def validate_observation(self, obs: Any) -> bool:
        """True when the observation matches this agent's plane and channels"""

    @abstractmethod
    def prepare_message(self, obs: Any, strategy: str, ratio: float, state: Any, train: bool) -> SharePlan:
        """
        Turn one observation into a share plan and its encoded message.

        Args:
            obs: The agent's observation this round
            strategy: Sharing strategy name
            ratio: Spatial selection ratio
            state: Curriculum state
            train: Training-phase sharing (background mining allowed)
        """

    @abstractmethod
    def fuse(self, ego: FeatureGrid, inbound: List[bytes]) -> FeatureGrid:
        """Fuse admitted neighbor messages into the ego feature"""

    def ensure_initialized(self):
        if not self._is_initialized and not self.initialize():
            raise RuntimeError(f"agent {self.name} failed to initialize")

    def get_status(self) -> Dict[str, Any]:
        """Return current agent status"""
        return {
            "name": self.name,
            "agent_id": self.agent_id,
            "initialized": self._is_initialized,
            "capabilities": self.config.capabilities,
            "channels": self.config.channels,
            "compressed_channels": self.config.compressed_channels,
        }


def describe_plan(plan: SharePlan, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Loggable summary of a share plan"""
    summary = {
        "agent_id": plan.agent_id,
        "fg_cells": plan.fg_mask.popcount(),
        "anchors": len(plan.anchors),
        "bg_selected": len(plan.selected_bg),
        "shared_cells": plan.shared_cells,
        "size_bits": plan.size_bits,
    }
    if extra:
        summary.update(extra)
    return summary
