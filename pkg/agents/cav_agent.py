"""
CAV Agent Module
================
Collaborating vehicle running the full sharing pipeline: density-refined
confidence, foreground context attention, curricular background pruning,
channel compression, binary16 encoding and foreground amplification fusion.
"""

from typing import List

from pipeline.cbp import CurriculumState, compose_shared, mine_bg
from pipeline.codec import CompressionPair, compress_cells, decode_message, decompress_scatter, encode_message
from pipeline.faf import FusionParams, max_fuse, run_faf
from pipeline.fca import DeformAttnParams, deformable_enrich, refine_confidence
from simworld.observe import AgentObservation
from simworld.strategies import mining_scope, predicted_foreground, strategy_mask
from utils.agent_base import AgentConfig, BaseCollaborativeAgent, SharePlan, describe_plan
from utils.errors import ShapeMismatchError
from utils.rng import derive_seed
from utils.tensor_core import CellMask, FeatureGrid

ATTENTION_TAG = 1
FUSION_TAG = 2
COMPRESSION_TAG = 3


class FadeLeadAgent(BaseCollaborativeAgent):
    """
    CAV agent sharing enriched foreground (plus mined background while
    training) and amplifying its ego feature with received messages.
    """

    def initialize(self) -> bool:
        if self._is_initialized:
            return True

        cfg = self.config
        seed = cfg.param_seed
        if cfg.attention == "identity":
            self.attention = DeformAttnParams.identity(cfg.channels, cfg.num_points)
        else:
            self.attention = DeformAttnParams.seeded(cfg.channels, cfg.num_points, derive_seed(seed, ATTENTION_TAG))
        if cfg.fusion == "gated_identity":
            self.fusion = FusionParams.gated_identity(cfg.channels, cfg.ln_eps)
        else:
            self.fusion = FusionParams.seeded(cfg.channels, derive_seed(seed, FUSION_TAG), cfg.ln_eps, cfg.proj_out_bias)
        self.compression = CompressionPair.seeded(cfg.channels, cfg.compression_ratio, derive_seed(seed, COMPRESSION_TAG))

        self._is_initialized = True
        self.logger.debug(f"Initialized {self.name}: C={cfg.channels}, C'={cfg.compressed_channels}")
        return True

    def validate_observation(self, obs: AgentObservation) -> bool:
        return obs.features.channels == self.config.channels

    def prepare_message(
        self,
        obs: AgentObservation,
        strategy: str,
        ratio: float,
        state: CurriculumState,
        train: bool,
    ) -> SharePlan:
        self.ensure_initialized()
        cfg = self.config
        if not self.validate_observation(obs):
            raise ShapeMismatchError(
                f"{self.name} expects {cfg.channels} channels, observation has {obs.features.channels}"
            )

        conf = refine_confidence(obs.conf, obs.density) if cfg.use_fca else obs.conf
        fg = predicted_foreground(conf, ratio, cfg.selection_mode, cfg.conf_threshold)
        ego = deformable_enrich(obs.features, fg, self.attention) if cfg.use_fca else obs.features
        share = strategy_mask(strategy, obs, ratio, conf, cfg.selection_mode, cfg.conf_threshold)

        anchors: List[int] = []
        selected: List[int] = []
        if train and cfg.use_cbp and state.background_active:
            mining = mine_bg(
                ego,
                obs.density,
                conf if cfg.cbp_uses_refined else obs.conf,
                fg,
                state.r_current,
                state.tau,
                cfg.cbp_aggregator,
                cfg.cbp_normalized_density,
            )
            room = (mining_scope(strategy, obs) - share).flat()
            anchors = mining.anchors
            selected = [c for c in mining.selected_bg if room[c]]
            share = share | CellMask.from_indices(share.height, share.width, selected)

        compressed = compress_cells(compose_shared(ego, share), self.compression)
        payload = encode_message(cfg.agent_id, obs.features.height, obs.features.width, compressed)
        plan = SharePlan(
            agent_id=cfg.agent_id,
            ego=ego,
            fg_mask=fg,
            shared_mask=share,
            anchors=anchors,
            selected_bg=selected,
            payload=payload,
            size_bits=len(payload) * 8,
        )
        self.logger.debug("Share plan ready", extra={"extra_data": describe_plan(plan, {"strategy": strategy})})
        return plan

    def fuse(self, ego: FeatureGrid, inbound: List[bytes]) -> FeatureGrid:
        self.ensure_initialized()
        msgs = [decompress_scatter(decode_message(data), self.compression) for data in inbound]
        if self.config.use_faf:
            return run_faf(ego, msgs, self.fusion)
        return max_fuse(ego, msgs)


def create_cav_agent(agent_id: int, **overrides) -> FadeLeadAgent:
    """
    Factory function to create a CAV agent

    Args:
        agent_id: Wire agent id
        **overrides: AgentConfig fields (channels, use_fca, param_seed, ...)

    Returns:
        Initialized FadeLeadAgent
    """
    config = AgentConfig(
        agent_id=agent_id,
        capabilities=["foreground_sharing", "background_mining", "amplification_fusion"],
        **overrides,
    )
    agent = FadeLeadAgent(config)
    agent.initialize()
    return agent
