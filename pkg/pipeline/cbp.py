"""
Curricular Background Pruning
=============================
Informative background mining and the annealed background-sharing schedule.

Mining picks confident background anchors (low confidence, high density),
scores the remaining background by feature similarity to those anchors and
shares the most similar cells next to the foreground. The schedule decays
the anchor ratio by gamma once per period and cuts it to zero at the final
stage.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from pipeline.fca import ConfidenceGrid
from utils.tensor_core import (
    CellMask,
    FeatureGrid,
    ScalarGrid,
    SparseCells,
    check_plane,
    cosine_matrix,
    gather_cells,
    minmax_normalize,
    ratio_count,
    topk_cells,
)

logger = logging.getLogger(f"fadelead.{__name__}")

Aggregator = Literal["max", "mean"]

DEFAULT_TAU = 0.05
CUTOFF_PERIODS = 4


# ============================================================================
# CURRICULUM SCHEDULE
# ============================================================================

def schedule_ratio(r0: float, gamma: float, period: int, epoch: int, final_cutoff_epoch: Optional[int]) -> float:
    """r_e = r0 * gamma ** (e // period), exactly 0 from the cutoff epoch on"""
    if final_cutoff_epoch is not None and epoch >= final_cutoff_epoch:
        return 0.0
    return r0 * gamma ** (epoch // period)


class CurriculumState(BaseModel):
    """Immutable schedule state; curriculum_step returns the next one"""

    model_config = ConfigDict(frozen=True)

    epoch: int = Field(default=0, ge=0)
    r0: float = Field(default=0.1, ge=0.0, lt=1.0)
    gamma: float = Field(default=0.8, gt=0.0, le=1.0)
    period: int = Field(default=5, ge=1)
    tau: float = Field(default=DEFAULT_TAU, ge=0.0, lt=1.0)
    r_current: float = Field(default=0.1, ge=0.0)
    final_cutoff_epoch: Optional[int] = Field(default=20, ge=0)

    @model_validator(mode="after")
    def _check_schedule(self):
        expected = schedule_ratio(self.r0, self.gamma, self.period, self.epoch, self.final_cutoff_epoch)
        if abs(self.r_current - expected) > 1e-12:
            raise ValueError(f"r_current {self.r_current} disagrees with the schedule value {expected}")
        return self

    @property
    def background_active(self) -> bool:
        return self.r_current > 0.0


def initial_state(
    r0: float = 0.1,
    gamma: float = 0.8,
    period: int = 5,
    tau: float = DEFAULT_TAU,
    final_cutoff_epoch: Optional[int] = None,
    cutoff: bool = True,
) -> CurriculumState:
    """
    Epoch-0 state.

    Without an explicit final_cutoff_epoch the cutoff lands after four decay
    periods; cutoff=False keeps decaying forever.
    """
    if not cutoff:
        final_cutoff_epoch = None
    elif final_cutoff_epoch is None:
        final_cutoff_epoch = CUTOFF_PERIODS * period
    return CurriculumState(
        epoch=0,
        r0=r0,
        gamma=gamma,
        period=period,
        tau=tau,
        r_current=schedule_ratio(r0, gamma, period, 0, final_cutoff_epoch),
        final_cutoff_epoch=final_cutoff_epoch,
    )


def curriculum_step(s: CurriculumState) -> CurriculumState:
    epoch = s.epoch + 1
    return s.model_copy(update={
        "epoch": epoch,
        "r_current": schedule_ratio(s.r0, s.gamma, s.period, epoch, s.final_cutoff_epoch),
    })


def inference_state(tau: float = 0.0) -> CurriculumState:
    """Deployment schedule: no background at all"""
    return CurriculumState(epoch=0, r0=0.0, gamma=1.0, period=1, tau=tau, r_current=0.0, final_cutoff_epoch=None)


# ============================================================================
# BACKGROUND MINING
# ============================================================================

@dataclass(frozen=True, eq=False)
class MiningOutput:
    shared_mask: CellMask
    anchors: List[int] = field(default_factory=list)
    selected_bg: List[int] = field(default_factory=list)


def background_score(
    conf: ConfidenceGrid,
    density: ScalarGrid,
    normalized_density: bool = False,
) -> ScalarGrid:
    """C^BG = (1 - conf) * density, raw density unless normalized_density"""
    check_plane(conf.grid, density)
    prior = minmax_normalize(density) if normalized_density else density
    return ScalarGrid((1.0 - conf.data) * prior.data)


def similarity_scores(f: FeatureGrid, pool: List[int], anchors: List[int], aggregator: Aggregator = "max") -> np.ndarray:
    """Per-pool-cell cosine similarity to the anchor set, max or mean over anchors"""
    vectors = f.cell_vectors()
    sims = cosine_matrix(vectors[np.asarray(pool, dtype=np.int64)], vectors[np.asarray(anchors, dtype=np.int64)])
    if aggregator == "max":
        return sims.max(axis=1)
    if aggregator == "mean":
        return sims.mean(axis=1)
    raise ValueError(f"unknown similarity aggregator: {aggregator}")


def mine_bg(
    f: FeatureGrid,
    density: ScalarGrid,
    conf: ConfidenceGrid,
    fg: CellMask,
    r: float,
    tau: float,
    aggregator: Aggregator = "max",
    normalized_density: bool = False,
) -> MiningOutput:
    """
    Informative background mining.

    Anchors are the top floor(r*H*W) background cells by C^BG and are never
    transmitted. The rest of the background is ranked by similarity to the
    anchors and the top floor(tau*H*W) join the shared mask. Both counts are
    capped at their pool sizes; with no anchors nothing is mined.
    """
    check_plane(f, density, conf.grid, fg)
    if not 0.0 <= r < 1.0:
        raise ValueError(f"r must be in [0, 1), got {r}")
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must be in [0, 1), got {tau}")

    h, w = fg.height, fg.width
    background = ~fg
    score = background_score(conf, density, normalized_density)

    k_anchor = min(ratio_count(r, h * w), background.popcount())
    anchors = topk_cells(score, k_anchor, background)
    if not anchors:
        return MiningOutput(shared_mask=fg, anchors=[], selected_bg=[])

    pool_mask = background - CellMask.from_indices(h, w, anchors)
    pool = pool_mask.indices()
    k_select = min(ratio_count(tau, h * w), len(pool))
    if k_select == 0:
        return MiningOutput(shared_mask=fg, anchors=anchors, selected_bg=[])

    sim_plane = np.zeros(h * w)
    sim_plane[pool] = similarity_scores(f, pool, anchors, aggregator)
    selected = topk_cells(ScalarGrid(sim_plane.reshape(h, w)), k_select, pool_mask)

    logger.debug(f"Background mining: {len(anchors)} anchors, {len(selected)} of {len(pool)} uncertain cells selected")
    return MiningOutput(
        shared_mask=fg | CellMask.from_indices(h, w, selected),
        anchors=anchors,
        selected_bg=selected,
    )


def compose_shared(enriched: FeatureGrid, shared_mask: CellMask) -> SparseCells:
    """Cells of the shared mask with their feature vectors, index-ascending"""
    check_plane(enriched, shared_mask)
    idx = np.flatnonzero(shared_mask.bits)
    return SparseCells(idx, gather_cells(enriched, idx))
