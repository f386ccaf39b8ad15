"""
Foreground Context Attention
============================
Density-refined confidence, foreground selection, and deformable attention
that enriches each foreground cell with samples from the whole BEV map.

Attention is single-scale with K sampling points; every parameter comes from
a SplitMix64 stream so identical seeds give identical enrichment.
"""

import logging
from dataclasses import dataclass

import numpy as np

from utils.errors import ShapeMismatchError
from utils.rng import SplitMix64
from utils.tensor_core import (
    CellMask,
    FeatureGrid,
    LinearMap,
    ScalarGrid,
    bilinear_sample_many,
    check_plane,
    gather_cells,
    minmax_normalize,
    ratio_count,
    softmax,
    topk_cells,
)

logger = logging.getLogger(f"fadelead.{__name__}")

DEFAULT_NUM_POINTS = 4


@dataclass(frozen=True, eq=False)
class ConfidenceGrid:
    """Scalar grid whose values all lie in [0, 1]"""

    grid: ScalarGrid

    def __post_init__(self):
        data = self.grid.data
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError(f"confidence outside [0, 1]: min={data.min()}, max={data.max()}")

    @property
    def data(self) -> np.ndarray:
        return self.grid.data

    @property
    def height(self) -> int:
        return self.grid.height

    @property
    def width(self) -> int:
        return self.grid.width

    @classmethod
    def from_array(cls, array) -> "ConfidenceGrid":
        return cls(ScalarGrid(array))


@dataclass(frozen=True, eq=False)
class DeformAttnParams:
    """
    Deformable attention parameters.

    offset_map: C -> 2K, offsets (dx, dy) in cell units, x along width
    weight_map: C -> K, attention logits
    value_map / output_map: C -> C
    """

    num_points: int
    offset_map: LinearMap
    weight_map: LinearMap
    value_map: LinearMap
    output_map: LinearMap
    seed: int = 0

    def __post_init__(self):
        if self.num_points < 1:
            raise ValueError("num_points must be positive")
        if self.offset_map.rows != 2 * self.num_points:
            raise ShapeMismatchError(f"offset_map needs {2 * self.num_points} rows, has {self.offset_map.rows}")
        if self.weight_map.rows != self.num_points:
            raise ShapeMismatchError(f"weight_map needs {self.num_points} rows, has {self.weight_map.rows}")
        channels = self.value_map.cols
        for name in ("offset_map", "weight_map", "value_map", "output_map"):
            if getattr(self, name).cols != channels:
                raise ShapeMismatchError(f"{name} expects {getattr(self, name).cols} channels, not {channels}")
        if self.value_map.rows != channels or self.output_map.rows != channels:
            raise ShapeMismatchError("value_map and output_map must be C -> C")

    @property
    def channels(self) -> int:
        return self.value_map.cols

    @classmethod
    def seeded(cls, channels: int, num_points: int = DEFAULT_NUM_POINTS, seed: int = 0) -> "DeformAttnParams":
        """Draw offset, weight, value, output maps in that order from one stream"""
        rng = SplitMix64(seed)
        return cls(
            num_points=num_points,
            offset_map=LinearMap.seeded(2 * num_points, channels, rng),
            weight_map=LinearMap.seeded(num_points, channels, rng),
            value_map=LinearMap.seeded(channels, channels, rng),
            output_map=LinearMap.seeded(channels, channels, rng),
            seed=seed,
        )

    @classmethod
    def identity(cls, channels: int, num_points: int = DEFAULT_NUM_POINTS) -> "DeformAttnParams":
        """Zero offsets, uniform attention, identity value and output maps"""
        return cls(
            num_points=num_points,
            offset_map=LinearMap.zeros(2 * num_points, channels),
            weight_map=LinearMap.zeros(num_points, channels),
            value_map=LinearMap.identity(channels),
            output_map=LinearMap.identity(channels),
        )


# ============================================================================
# CONFIDENCE REFINEMENT & SELECTION
# ============================================================================

def refine_confidence(conf: ConfidenceGrid, density: ScalarGrid) -> ConfidenceGrid:
    """C' = (1 - norm(D)) * C"""
    check_plane(conf.grid, density)
    if density.data.min() < 0.0:
        raise ValueError("density must be non-negative")
    suppression = 1.0 - minmax_normalize(density).data
    return ConfidenceGrid(ScalarGrid(np.clip(suppression * conf.data, 0.0, 1.0)))


def select_foreground(conf: ConfidenceGrid, ratio: float) -> CellMask:
    """Top floor(ratio * H * W) cells by confidence, ties to the lowest index"""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    h, w = conf.height, conf.width
    k = ratio_count(ratio, h * w)
    chosen = topk_cells(conf.grid, k, CellMask.full(h, w))
    logger.debug(f"Foreground top-k: ratio={ratio}, k={k}")
    return CellMask.from_indices(h, w, chosen)


def select_foreground_threshold(conf: ConfidenceGrid, threshold: float) -> CellMask:
    """Every cell whose confidence reaches the threshold"""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return CellMask(conf.data >= threshold)


# ============================================================================
# DEFORMABLE ENRICHMENT
# ============================================================================

def attention_weights(f: FeatureGrid, fg: CellMask, p: DeformAttnParams) -> np.ndarray:
    """(N, K) softmax weights for the foreground queries in ascending index order"""
    queries = gather_cells(f, np.flatnonzero(fg.bits))
    return softmax(p.weight_map.apply_vectors(queries), axis=-1)


def deformable_enrich(f: FeatureGrid, fg: CellMask, p: DeformAttnParams) -> FeatureGrid:
    """
    Enrich foreground cells; every other cell passes through unchanged.

    For query q with feature x_q: offsets = offset_map(x_q) as K (dx, dy)
    pairs, A = softmax(weight_map(x_q)), and the new feature is
    output_map(sum_k A_k * value_map(sample(f, q + offset_k))).
    """
    check_plane(f, fg)
    if p.channels != f.channels:
        raise ShapeMismatchError(f"attention expects {p.channels} channels, grid has {f.channels}")
    query_idx = np.flatnonzero(fg.bits)
    if query_idx.size == 0:
        return f

    n, k = query_idx.size, p.num_points
    queries = gather_cells(f, query_idx)
    offsets = p.offset_map.apply_vectors(queries).reshape(n, k, 2)
    weights = softmax(p.weight_map.apply_vectors(queries), axis=-1)

    qx = (query_idx % f.width).astype(np.float64)
    qy = (query_idx // f.width).astype(np.float64)
    xs = qx[:, None] + offsets[:, :, 0]
    ys = qy[:, None] + offsets[:, :, 1]
    samples = bilinear_sample_many(f, xs, ys).reshape(n, k, f.channels)

    values = p.value_map.apply_vectors(samples)
    pooled = np.einsum("nk,nkc->nc", weights, values)
    enriched = p.output_map.apply_vectors(pooled)

    out = f.cell_vectors().copy()
    out[query_idx] = enriched
    logger.debug(f"Deformable enrichment over {n} foreground cells with K={k}")
    return FeatureGrid(out.reshape(f.data.shape))
