"""
Foreground Amplification Fusion
===============================
Aggregate received sparse features, model the ego/neighbor interaction and
add the mask-gated result back onto the ego feature.

    F^r     = Proj(LN(max_j F_j * M_j))      on cells some neighbor covers
    F^merge = Conv(Proj(LN([F^ego, F^r])))
    F^fused = F^ego + Proj(F^merge * F^r * M^sh)
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from utils.errors import ShapeMismatchError
from utils.rng import SplitMix64
from utils.tensor_core import (
    CellMask,
    FeatureGrid,
    LinearMap,
    apply_linear,
    cellwise_max,
    check_plane,
    conv2d_3x3,
    delta_kernel,
    layer_norm,
    layer_norm_grid,
)

logger = logging.getLogger(f"fadelead.{__name__}")

NeighborMessage = Tuple[FeatureGrid, CellMask]

DEFAULT_LN_EPS = 1e-5


@dataclass(frozen=True, eq=False)
class FusionParams:
    ln_eps: float
    proj_r: LinearMap
    proj_merge: LinearMap
    conv_merge: np.ndarray
    proj_out: LinearMap
    seed: int = 0

    def __post_init__(self):
        if self.ln_eps <= 0:
            raise ValueError("ln_eps must be positive")
        c = self.proj_r.rows
        if self.proj_r.cols != c:
            raise ShapeMismatchError("proj_r must be C -> C")
        if (self.proj_merge.rows, self.proj_merge.cols) != (c, 2 * c):
            raise ShapeMismatchError(f"proj_merge must be {2 * c} -> {c}")
        if (self.proj_out.rows, self.proj_out.cols) != (c, c):
            raise ShapeMismatchError("proj_out must be C -> C")
        kernel = np.array(self.conv_merge, dtype=np.float64)
        if kernel.shape != (c, c, 3, 3):
            raise ShapeMismatchError(f"conv_merge must have shape ({c}, {c}, 3, 3), got {kernel.shape}")
        kernel.flags.writeable = False
        object.__setattr__(self, "conv_merge", kernel)

    @property
    def channels(self) -> int:
        return self.proj_r.rows

    @classmethod
    def seeded(
        cls,
        channels: int,
        seed: int = 0,
        ln_eps: float = DEFAULT_LN_EPS,
        proj_out_bias: float = 0.0,
    ) -> "FusionParams":
        """proj_r, proj_merge, conv_merge then proj_out weights from one stream, all in [-1/sqrt(C), 1/sqrt(C))"""
        rng = SplitMix64(seed)
        bound = 1.0 / math.sqrt(channels)
        proj_r = LinearMap.seeded(channels, channels, rng, bound=bound)
        proj_merge = LinearMap.seeded(channels, 2 * channels, rng, bound=bound)
        conv = rng.uniform(channels * channels * 9, -bound, bound).reshape(channels, channels, 3, 3)
        out = LinearMap.seeded(channels, channels, rng, with_bias=False, bound=bound)
        proj_out = LinearMap(out.weights, np.full(channels, float(proj_out_bias)))
        return cls(ln_eps, proj_r, proj_merge, conv, proj_out, seed)

    @classmethod
    def gated_identity(cls, channels: int, ln_eps: float = DEFAULT_LN_EPS) -> "FusionParams":
        """Merge collapses to 1 everywhere, so fused = ego + F^r on masked cells"""
        return cls(
            ln_eps=ln_eps,
            proj_r=LinearMap.identity(channels),
            proj_merge=LinearMap.zeros(channels, 2 * channels, bias=1.0),
            conv_merge=delta_kernel(channels),
            proj_out=LinearMap.identity(channels),
        )


def _check_messages(msgs: Sequence[NeighborMessage]) -> None:
    first_grid, _ = msgs[0]
    for grid, mask in msgs:
        if grid.shape != first_grid.shape:
            raise ShapeMismatchError(f"neighbor grid {grid.shape} does not match {first_grid.shape}")
        check_plane(grid, mask)


def masked(grid: FeatureGrid, mask: CellMask) -> FeatureGrid:
    return FeatureGrid(np.where(mask.bits[..., None], grid.data, 0.0))


def union_mask(msgs: Sequence[NeighborMessage]) -> Optional[CellMask]:
    if not msgs:
        return None
    bits = np.logical_or.reduce([mask.bits for _, mask in msgs])
    return CellMask(bits)


def aggregate_neighbors(
    msgs: Sequence[NeighborMessage],
    p: FusionParams,
    plane: Optional[Tuple[int, int, int]] = None,
) -> Tuple[FeatureGrid, CellMask]:
    """
    Max-aggregate neighbors into (F^r, M^sh).

    Each neighbor grid is zero outside its mask (F_j * M_j) before the
    cell-wise max. LN and Proj act on covered cells; uncovered cells stay
    zero. With no neighbors the result is the zero grid of `plane` (C, H, W)
    and an empty mask.
    """
    if not msgs:
        if plane is None:
            raise ValueError("plane is required when there are no neighbor messages")
        c, h, w = plane
        return FeatureGrid.zeros(c, h, w), CellMask.empty(h, w)

    _check_messages(msgs)
    covered = union_mask(msgs)
    pooled = cellwise_max([masked(grid, mask) for grid, mask in msgs])

    normed = layer_norm_grid(pooled, p.ln_eps, covered)
    projected = apply_linear(p.proj_r, normed).data
    fr = np.where(covered.bits[..., None], projected, 0.0)
    return FeatureGrid(fr), covered


def merge_interaction(ego: FeatureGrid, fr: FeatureGrid, p: FusionParams) -> FeatureGrid:
    """Conv(Proj(LN([ego, fr]))) with the concatenation along channels"""
    if ego.shape != fr.shape:
        raise ShapeMismatchError(f"ego {ego.shape} and neighbor {fr.shape} features differ")
    joined = np.concatenate([ego.data, fr.data], axis=-1)
    normed = FeatureGrid(layer_norm(joined, p.ln_eps))
    return conv2d_3x3(apply_linear(p.proj_merge, normed), p.conv_merge)


def amplify(ego: FeatureGrid, merge: FeatureGrid, fr: FeatureGrid, mask: CellMask, p: FusionParams) -> FeatureGrid:
    """ego + proj_out(merge * fr * mask); unmasked cells only see the proj_out bias"""
    if not (ego.shape == merge.shape == fr.shape):
        raise ShapeMismatchError("ego, merge and neighbor features must share one shape")
    check_plane(ego, mask)

    out = ego.data.copy()
    bias = p.proj_out.bias
    if np.any(bias != 0.0):
        out[~mask.bits] += bias
    if mask.popcount():
        gated = merge.data[mask.bits] * fr.data[mask.bits]
        out[mask.bits] += p.proj_out.apply_vectors(gated)
    return FeatureGrid(out)


def run_faf(ego: FeatureGrid, msgs: Sequence[NeighborMessage], p: FusionParams) -> FeatureGrid:
    """aggregate -> merge -> amplify"""
    if p.channels != ego.channels:
        raise ShapeMismatchError(f"fusion expects {p.channels} channels, ego has {ego.channels}")
    fr, mask = aggregate_neighbors(msgs, p, plane=ego.shape)
    if mask.popcount() == 0:
        return amplify(ego, FeatureGrid.zeros(*ego.shape), fr, mask, p)
    merge = merge_interaction(ego, fr, p)
    logger.debug(f"FAF over {len(msgs)} neighbors covering {mask.popcount()} cells")
    return amplify(ego, merge, fr, mask, p)


def max_fuse(ego: FeatureGrid, msgs: Sequence[NeighborMessage]) -> FeatureGrid:
    """Element-wise max of ego and each neighbor over the cells that neighbor covers"""
    out = ego.data.copy()
    for grid, mask in msgs:
        if grid.shape != ego.shape:
            raise ShapeMismatchError(f"neighbor grid {grid.shape} does not match ego {ego.shape}")
        check_plane(ego, mask)
        covered = mask.bits[..., None]
        out = np.where(covered, np.maximum(out, grid.data), out)
    return FeatureGrid(out)
