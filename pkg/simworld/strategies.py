"""
Sharing Strategies
==================
Masking policies compared at matched budgets: predicted foreground,
ground-truth foreground, and ground-truth background restricted to the
densest cells.
"""

from typing import Optional

from pipeline.fca import ConfidenceGrid, refine_confidence, select_foreground, select_foreground_threshold
from simworld.observe import AgentObservation
from utils.tensor_core import CellMask, ratio_count, topk_cells

PRED_FG = "pred_fg"
GT_FG = "gt_fg"
GT_BG = "gt_bg"
STRATEGY_KINDS = (PRED_FG, GT_FG, GT_BG)


def predicted_foreground(
    conf: ConfidenceGrid,
    ratio: float,
    selection_mode: str = "topk",
    threshold: float = 0.5,
) -> CellMask:
    if selection_mode == "topk":
        return select_foreground(conf, ratio)
    if selection_mode == "threshold":
        return select_foreground_threshold(conf, threshold)
    raise ValueError(f"unknown selection mode: {selection_mode}")


def dense_background(obs: AgentObservation, ratio: float) -> CellMask:
    """Densest floor(ratio*H*W) ground-truth background cells"""
    h, w = obs.gt_bg.height, obs.gt_bg.width
    k = min(ratio_count(ratio, h * w), obs.gt_bg.popcount())
    return CellMask.from_indices(h, w, topk_cells(obs.density, k, obs.gt_bg))


def strategy_mask(
    kind: str,
    obs: AgentObservation,
    ratio: float,
    conf: Optional[ConfidenceGrid] = None,
    selection_mode: str = "topk",
    threshold: float = 0.5,
) -> CellMask:
    """
    Cells an agent shares under a strategy.

    conf is the confidence Pred-FG ranks on; it defaults to the oracle
    confidence refined by the density prior.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if kind == PRED_FG:
        if conf is None:
            conf = refine_confidence(obs.conf, obs.density)
        return predicted_foreground(conf, ratio, selection_mode, threshold)
    if kind == GT_FG:
        return obs.gt_fg
    if kind == GT_BG:
        return dense_background(obs, ratio)
    raise ValueError(f"unknown strategy: {kind}")


def mining_scope(kind: str, obs: AgentObservation) -> CellMask:
    """Cells mined background may add to a strategy's mask; GT-BG never gains foreground"""
    if kind == GT_BG:
        return obs.gt_bg
    return CellMask.full(obs.gt_bg.height, obs.gt_bg.width)
