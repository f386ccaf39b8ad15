"""
Round Orchestrator
==================
One collaboration round over a scene: every agent prepares its message,
messages are admitted against the per-receiver budget in ascending
(receiver, sender) order, and every receiver fuses what it was admitted and
is scored against its own no-fusion baseline.
"""

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from agents.cav_agent import FadeLeadAgent, create_cav_agent
from models.experiment import ExperimentConfig, PipelineConfig
from models.metrics import FusionMetrics, MetricRow
from models.scene import SceneParams, SceneSpec
from pipeline.cbp import CurriculumState, inference_state, initial_state
from pipeline.codec import BudgetLedger, admit
from simworld.observe import AgentObservation, observe
from simworld.scoring import activation_map, score_activation
from utils.agent_base import SharePlan
from utils.logger import app_logger as logger
from utils.logger import log_performance
from utils.memory import AgentRoundRecord, RoundMemory
from utils.tensor_core import CellMask, ScalarGrid


@dataclass(frozen=True, eq=False)
class AgentArtifacts:
    """Per-agent views kept for heatmaps and message dumps"""
    agent: int
    pre_fusion: ScalarGrid
    post_fusion: ScalarGrid
    shared_mask: CellMask
    payload: bytes
    metrics: FusionMetrics
    baseline: FusionMetrics


@dataclass(eq=False)
class RoundResult:
    rows: List[MetricRow]
    ledger: BudgetLedger
    memory: RoundMemory
    artifacts: List[AgentArtifacts] = field(default_factory=list)

    def artifact(self, agent: int) -> AgentArtifacts:
        return self.artifacts[agent]


class RoundOrchestrator:
    """
    Round orchestrator for collaborating agents

    Features:
    - Shared, deterministic agent parameters from the pipeline seed
    - Budget admission with an audit trail in RoundMemory
    - FAF (or plain max fusion) per receiver
    - No-fusion baseline metrics next to fused metrics
    """

    def __init__(self, pipeline: PipelineConfig, scene_params: SceneParams, budget_bits: int):
        self.pipeline = pipeline
        self.scene_params = scene_params
        self.budget_bits = budget_bits
        self.agents: Dict[int, FadeLeadAgent] = {}

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "RoundOrchestrator":
        return cls(config.pipeline, config.scene, config.budget_bits)

    # ========================================================================
    # AGENTS & OBSERVATIONS
    # ========================================================================

    def get_agent(self, agent_id: int) -> FadeLeadAgent:
        if agent_id not in self.agents:
            p = self.pipeline
            self.agents[agent_id] = create_cav_agent(
                agent_id,
                channels=p.channels,
                compression_ratio=p.compression_ratio,
                use_fca=p.use_fca,
                use_cbp=p.use_cbp,
                use_faf=p.use_faf,
                selection_mode=p.selection_mode,
                conf_threshold=p.conf_threshold,
                num_points=p.num_points,
                attention=p.attention,
                fusion=p.fusion,
                ln_eps=p.ln_eps,
                proj_out_bias=p.proj_out_bias,
                cbp_aggregator=p.cbp_aggregator,
                cbp_normalized_density=p.cbp_normalized_density,
                cbp_uses_refined=p.cbp_uses_refined,
                param_seed=p.param_seed,
            )
            logger.debug(f"Agent {agent_id} ready", extra={"extra_data": self.agents[agent_id].get_status()})
        return self.agents[agent_id]

    def observe(self, scene: SceneSpec, agent_index: int) -> AgentObservation:
        sp = self.scene_params
        return observe(
            scene,
            agent_index,
            sp.n_rays,
            channels=self.pipeline.channels,
            noise_sigma=sp.noise_sigma,
            ring_ranges=sp.ring_ranges,
            ray_step=sp.ray_step,
        )

    def observe_all(self, scene: SceneSpec) -> List[AgentObservation]:
        return [self.observe(scene, i) for i in range(len(scene.agents))]

    # ========================================================================
    # ROUND EXECUTION
    # ========================================================================

    def exchange(self, plans: Sequence[SharePlan], memory: RoundMemory) -> tuple:
        """Admit every sender -> receiver message; returns (ledger, inbound payloads)"""
        ledger = BudgetLedger(budget_bits=self.budget_bits)
        ids = sorted(plan.agent_id for plan in plans)
        by_id = {plan.agent_id: plan for plan in plans}
        inbound: Dict[int, List[bytes]] = {i: [] for i in ids}
        for receiver in ids:
            for sender in ids:
                if sender == receiver:
                    continue
                result = admit(ledger, sender, receiver, by_id[sender].size_bits)
                memory.log_message(sender, receiver, result.bits, result.accepted, result.inbound_total)
                if result.accepted:
                    ledger = result.ledger
                    inbound[receiver].append(by_id[sender].payload)
        return ledger, inbound

    def run(
        self,
        scene: SceneSpec,
        observations: Sequence[AgentObservation],
        strategy: str,
        ratio: float,
        state: CurriculumState,
        train: bool = True,
        seed: Optional[int] = None,
        epoch: Optional[int] = None,
    ) -> RoundResult:
        """
        Run one round

        Args:
            scene: Scene the observations came from
            observations: One observation per agent, agent order
            strategy: Sharing strategy name
            ratio: Spatial selection ratio
            state: Curriculum state (epoch and background ratio)
            train: Training-phase sharing; False shares foreground only
            seed: Seed reported in the rows (defaults to the scene seed)
            epoch: Epoch reported in the rows (defaults to state.epoch)

        Returns:
            RoundResult with metric rows, ledger, memory and artifacts
        """
        start_time = time.perf_counter()
        seed = scene.seed if seed is None else seed
        epoch = state.epoch if epoch is None else epoch
        memory = RoundMemory()

        plans: List[SharePlan] = []
        for i, obs in enumerate(observations):
            plan = self.get_agent(i).prepare_message(obs, strategy, ratio, state, train)
            plans.append(plan)
            memory.log_agent_record(AgentRoundRecord(
                agent=i,
                fg_cells=plan.fg_mask.popcount(),
                anchors=len(plan.anchors),
                bg_selected=len(plan.selected_bg),
                shared_cells=plan.shared_cells,
                message_bits=plan.size_bits,
            ))

        ledger, inbound = self.exchange(plans, memory)

        rows: List[MetricRow] = []
        artifacts: List[AgentArtifacts] = []
        threshold = self.pipeline.act_threshold
        for i, (plan, obs) in enumerate(zip(plans, observations)):
            fused = self.get_agent(i).fuse(plan.ego, inbound[i])
            pre = activation_map(plan.ego)
            post = activation_map(fused)
            baseline = score_activation(pre, obs.gt_fg, threshold)
            metrics = score_activation(post, obs.gt_fg, threshold)
            record = memory.update_agent_record(
                i,
                bits_sent=ledger.outbound(i),
                bits_received=ledger.inbound(i),
                rejected_msgs=memory.rejected_count(i),
                metrics=metrics,
                baseline=baseline,
            )
            rows.append(MetricRow(
                seed=seed,
                epoch=epoch,
                agent=i,
                strategy=strategy,
                ratio=ratio,
                **metrics.model_dump(),
                bits_sent=record.bits_sent,
                bits_received=record.bits_received,
                rejected_msgs=record.rejected_msgs,
            ))
            artifacts.append(AgentArtifacts(
                agent=i,
                pre_fusion=pre,
                post_fusion=post,
                shared_mask=plan.shared_mask,
                payload=plan.payload,
                metrics=metrics,
                baseline=baseline,
            ))

        duration = time.perf_counter() - start_time
        memory.log_round_event(
            seed=seed,
            epoch=epoch,
            strategy=strategy,
            ratio=ratio,
            mode="train" if train else "infer",
            r_current=state.r_current,
            agents=len(plans),
            processing_time=duration,
        )
        log_performance("round", duration, {
            "seed": seed, "epoch": epoch, "strategy": strategy, "ratio": ratio,
            **memory.get_exchange_stats(),
        })
        logger.debug(f"Round seed={seed} epoch={epoch} {strategy}@{ratio}: {len(rows)} rows")
        return RoundResult(rows=rows, ledger=ledger, memory=memory, artifacts=artifacts)


def curriculum_for(config: ExperimentConfig, train: bool) -> CurriculumState:
    """Epoch-0 state for a run mode"""
    if not train:
        return inference_state()
    c = config.curriculum
    return initial_state(c.r0, c.gamma, c.period, c.tau, c.final_cutoff_epoch, c.cutoff)


def run_round(
    scene: SceneSpec,
    config: ExperimentConfig,
    state: Optional[CurriculumState] = None,
    strategy: Optional[str] = None,
    ratio: Optional[float] = None,
    train: Optional[bool] = None,
) -> RoundResult:
    """Single round with defaults taken from the config"""
    train = (config.mode == "train") if train is None else train
    orchestrator = RoundOrchestrator.from_config(config)
    return orchestrator.run(
        scene,
        orchestrator.observe_all(scene),
        strategy or config.pipeline.strategies[0],
        ratio if ratio is not None else config.pipeline.ratios[0],
        state or curriculum_for(config, train),
        train=train,
    )
