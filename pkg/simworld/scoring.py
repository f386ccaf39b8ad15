"""
Proxy Scoring
=============
Foreground-localization proxy for detection quality: per-cell L2 activation,
min-max normalized, thresholded and compared with the ground-truth mask.
Every ratio with a zero denominator reports 0.
"""

import numpy as np

from models.metrics import FusionMetrics
from utils.tensor_core import CellMask, FeatureGrid, ScalarGrid, check_plane, minmax_normalize

DEFAULT_ACT_THRESHOLD = 0.5


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den > 0 else 0.0


def activation_map(fused: FeatureGrid) -> ScalarGrid:
    """Min-max normalized per-cell L2 norm"""
    return minmax_normalize(ScalarGrid(np.linalg.norm(fused.data, axis=-1)))


def score_activation(act: ScalarGrid, gt_fg: CellMask, act_threshold: float = DEFAULT_ACT_THRESHOLD) -> FusionMetrics:
    check_plane(act, gt_fg)
    predicted = act.data >= act_threshold
    truth = gt_fg.bits
    tp = int(np.count_nonzero(predicted & truth))
    n_pred = int(np.count_nonzero(predicted))
    n_true = int(np.count_nonzero(truth))
    n_union = int(np.count_nonzero(predicted | truth))
    bg = ~truth
    return FusionMetrics(
        recall=_ratio(tp, n_true),
        precision=_ratio(tp, n_pred),
        iou=_ratio(tp, n_union),
        mean_fg_act=min(1.0, float(act.data[truth].mean())) if n_true else 0.0,
        mean_bg_act=min(1.0, float(act.data[bg].mean())) if bg.any() else 0.0,
    )


def score_fused(fused: FeatureGrid, gt_fg: CellMask, act_threshold: float = DEFAULT_ACT_THRESHOLD) -> FusionMetrics:
    return score_activation(activation_map(fused), gt_fg, act_threshold)
