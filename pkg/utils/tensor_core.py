"""
Tensor Core
===========
Deterministic numeric primitives shared by every pipeline stage.

Grid layout: a FeatureGrid stores its data as an (H, W, C) float64 array, so a
row-major cell index ``y * W + x`` addresses the C-vector ``data[y, x]``.
All value types are frozen dataclasses wrapping read-only numpy arrays;
every operation returns a new value and never mutates its inputs.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from utils.errors import InsufficientCellsError, NonFiniteError, ShapeMismatchError
from utils.rng import SplitMix64


EPS_SIM = 1e-12
RATIO_SLACK = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


# ============================================================================
# VALUE TYPES
# ============================================================================

def _float_array(value, ndim: int, what: str) -> np.ndarray:
    array = np.array(value, dtype=np.float64)
    if array.ndim != ndim or min(array.shape) < 1:
        raise ShapeMismatchError(f"{what} needs {ndim} positive dims, got shape {array.shape}")
    if not np.isfinite(array).all():
        raise NonFiniteError(f"{what} holds non-finite values")
    return _frozen(array)


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """Dense C x H x W feature map stored cell-major as (H, W, C)"""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _float_array(self.data, 3, "feature grid"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return (self.channels, self.height, self.width)

    @property
    def cells(self) -> int:
        return self.height * self.width

    def cell_vectors(self) -> np.ndarray:
        """(H*W, C) view in row-major cell order"""
        return self.data.reshape(self.cells, self.channels)

    def cell(self, index: int) -> np.ndarray:
        return self.cell_vectors()[index]

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "FeatureGrid":
        return cls(np.zeros((height, width, channels)))

    @classmethod
    def from_chw(cls, array: np.ndarray) -> "FeatureGrid":
        """Build from a channel-first (C, H, W) array"""
        return cls(np.moveaxis(np.asarray(array, dtype=np.float64), 0, -1))


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    """H x W field of finite reals (confidence, density, activation)"""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _float_array(self.data, 2, "scalar grid"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def cells(self) -> int:
        return self.data.size

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    @classmethod
    def zeros(cls, height: int, width: int) -> "ScalarGrid":
        return cls(np.zeros((height, width)))


@dataclass(frozen=True, eq=False)
class CellMask:
    """H x W boolean selection mask"""

    bits: np.ndarray

    def __post_init__(self):
        array = np.array(self.bits, dtype=bool)
        if array.ndim != 2 or min(array.shape) < 1:
            raise ShapeMismatchError(f"cell mask needs shape (H, W) with positive dims, got {array.shape}")
        object.__setattr__(self, "bits", _frozen(array))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def cells(self) -> int:
        return self.bits.size

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1)

    def indices(self) -> List[int]:
        """Set cells as ascending row-major indices"""
        return np.flatnonzero(self.bits).tolist()

    def __eq__(self, other) -> bool:
        if not isinstance(other, CellMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None

    def __or__(self, other: "CellMask") -> "CellMask":
        _check_same_plane(self, other)
        return CellMask(self.bits | other.bits)

    def __and__(self, other: "CellMask") -> "CellMask":
        _check_same_plane(self, other)
        return CellMask(self.bits & other.bits)

    def __invert__(self) -> "CellMask":
        return CellMask(~self.bits)

    def __sub__(self, other: "CellMask") -> "CellMask":
        _check_same_plane(self, other)
        return CellMask(self.bits & ~other.bits)

    @classmethod
    def empty(cls, height: int, width: int) -> "CellMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, height: int, width: int) -> "CellMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def from_indices(cls, height: int, width: int, indices: Sequence[int]) -> "CellMask":
        flat = np.zeros(height * width, dtype=bool)
        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= height * width):
            raise ShapeMismatchError("cell index outside the plane")
        flat[idx] = True
        return cls(flat.reshape(height, width))


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Affine map rows x cols applied per cell: y = W x + b"""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weights = _float_array(self.weights, 2, "linear map weights")
        bias = np.array(self.bias, dtype=np.float64)
        if bias.shape != (weights.shape[0],):
            raise ShapeMismatchError(f"bias shape {bias.shape} does not match {weights.shape[0]} rows")
        if not np.isfinite(bias).all():
            raise NonFiniteError("linear map bias holds non-finite values")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", _frozen(bias))

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    def apply_vectors(self, vectors: np.ndarray) -> np.ndarray:
        """Apply to an (N, cols) batch of vectors"""
        if vectors.shape[-1] != self.cols:
            raise ShapeMismatchError(f"linear map expects {self.cols} inputs, got {vectors.shape[-1]}")
        return vectors @ self.weights.T + self.bias

    @classmethod
    def identity(cls, size: int) -> "LinearMap":
        return cls(np.eye(size), np.zeros(size))

    @classmethod
    def zeros(cls, rows: int, cols: int, bias: float = 0.0) -> "LinearMap":
        return cls(np.zeros((rows, cols)), np.full(rows, float(bias)))

    @classmethod
    def seeded(
        cls, rows: int, cols: int, rng: SplitMix64, with_bias: bool = True, bound: Optional[float] = None
    ) -> "LinearMap":
        """Weights and bias uniform in [-bound, bound), weights drawn first; bound defaults to 1/sqrt(cols)"""
        if bound is None:
            bound = 1.0 / math.sqrt(cols)
        weights = rng.uniform(rows * cols, -bound, bound).reshape(rows, cols)
        bias = rng.uniform(rows, -bound, bound) if with_bias else np.zeros(rows)
        return cls(weights, bias)


@dataclass(frozen=True, eq=False)
class SparseCells:
    """Ascending cell indices with one vector per listed cell"""

    indices: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        vec = np.array(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape[0] != idx.size:
            raise ShapeMismatchError(f"{idx.size} indices need a ({idx.size}, C) vector block, got {vec.shape}")
        if idx.size > 1 and not (np.diff(idx) > 0).all():
            raise ShapeMismatchError("sparse cell indices must be strictly ascending")
        if not np.isfinite(vec).all():
            raise NonFiniteError("sparse cell vectors hold non-finite values")
        object.__setattr__(self, "indices", _frozen(idx))
        object.__setattr__(self, "vectors", _frozen(vec))

    @property
    def count(self) -> int:
        return int(self.indices.size)

    @property
    def channels(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def empty(cls, channels: int) -> "SparseCells":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, channels)))


def _check_same_plane(a, b) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeMismatchError(f"plane {a.height}x{a.width} does not match {b.height}x{b.width}")


def check_plane(*items) -> None:
    """Raise unless every grid/mask shares the same H x W"""
    for item in items[1:]:
        _check_same_plane(items[0], item)


# ============================================================================
# OPERATIONS
# ============================================================================

def minmax_normalize(g: ScalarGrid) -> ScalarGrid:
    """(g - min) / (max - min); a constant map normalizes to all zeros"""
    lo = float(g.data.min())
    hi = float(g.data.max())
    if hi == lo:
        return ScalarGrid(np.zeros_like(g.data))
    return ScalarGrid(np.clip((g.data - lo) / (hi - lo), 0.0, 1.0))


def ratio_count(ratio: float, total: int) -> int:
    """floor(ratio * total) with a small slack against binary rounding, capped at total"""
    return max(0, min(total, int(math.floor(ratio * total + RATIO_SLACK))))


def topk_cells(score: ScalarGrid, k: int, eligible: CellMask) -> List[int]:
    """
    Indices of the k highest-scoring eligible cells.

    Ties break toward the lowest row-major index; the result is ordered by
    descending score, then ascending index.
    """
    check_plane(score, eligible)
    candidates = np.flatnonzero(eligible.bits)
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > candidates.size:
        raise InsufficientCellsError(
            f"insufficient eligible cells: requested {k}, eligible {candidates.size}"
        )
    if k == 0:
        return []
    values = score.flat()[candidates]
    # candidates are ascending, so a stable sort on -score keeps index order within ties
    order = np.argsort(-values, kind="stable")
    return candidates[order[:k]].tolist()


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """a.b / (|a||b|); 0 when either norm is below EPS_SIM"""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ShapeMismatchError(f"vector lengths differ: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < EPS_SIM or nb < EPS_SIM:
        return 0.0
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of rows of a (N, C) against rows of b (M, C)"""
    if a.shape[-1] != b.shape[-1]:
        raise ShapeMismatchError(f"vector lengths differ: {a.shape[-1]} vs {b.shape[-1]}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    safe_a = np.where(na < EPS_SIM, 1.0, na)
    safe_b = np.where(nb < EPS_SIM, 1.0, nb)
    sim = (a / safe_a[:, None]) @ (b / safe_b[:, None]).T
    sim[na < EPS_SIM, :] = 0.0
    sim[:, nb < EPS_SIM] = 0.0
    return np.clip(sim, -1.0, 1.0)


def layer_norm(v: np.ndarray, eps: float) -> np.ndarray:
    """
    (v - mean) / sqrt(var + eps) over the last axis, population variance,
    no learned affine. Works on a single vector or an (N, C) batch.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    array = np.asarray(v, dtype=np.float64)
    mean = array.mean(axis=-1, keepdims=True)
    var = array.var(axis=-1, keepdims=True)
    return (array - mean) / np.sqrt(var + eps)


def layer_norm_grid(g: FeatureGrid, eps: float, mask: CellMask = None) -> FeatureGrid:
    """Per-cell channel layer norm; with a mask, uncovered cells become zero"""
    normed = layer_norm(g.data, eps)
    if mask is not None:
        check_plane(g, mask)
        normed = np.where(mask.bits[..., None], normed, 0.0)
    return FeatureGrid(normed)


def apply_linear(m: LinearMap, g: FeatureGrid) -> FeatureGrid:
    """Per-cell (1x1) affine projection; output channels = m.rows"""
    if m.cols != g.channels:
        raise ShapeMismatchError(f"linear map expects {m.cols} channels, grid has {g.channels}")
    return FeatureGrid(g.data @ m.weights.T + m.bias)


def conv2d_3x3(g: FeatureGrid, kernel: np.ndarray) -> FeatureGrid:
    """
    3x3 convolution, stride 1, zero padding 1 (cross-correlation convention).

    kernel has shape (C_out, C_in, 3, 3); taps are accumulated in fixed
    row-major order.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ShapeMismatchError(f"kernel needs shape (C_out, C_in, 3, 3), got {kernel.shape}")
    if kernel.shape[1] != g.channels:
        raise ShapeMismatchError(f"kernel expects {kernel.shape[1]} channels, grid has {g.channels}")
    h, w = g.height, g.width
    padded = np.pad(g.data, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((h, w, kernel.shape[0]))
    for i in range(3):
        for j in range(3):
            out += padded[i:i + h, j:j + w, :] @ kernel[:, :, i, j].T
    return FeatureGrid(out)


def delta_kernel(channels: int) -> np.ndarray:
    """Center-one identity kernel (C, C, 3, 3)"""
    kernel = np.zeros((channels, channels, 3, 3))
    kernel[np.arange(channels), np.arange(channels), 1, 1] = 1.0
    return kernel


def bilinear_sample_many(g: FeatureGrid, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """
    Bilinear samples at continuous (x, y) cell coordinates, x along width.

    Neighbors outside the grid read zeros. Returns (N, C).
    """
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros((xs.size, g.channels))
    corners = (
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    )
    for dx, dy, weight in corners:
        cx = x0 + dx
        cy = y0 + dy
        inside = (cx >= 0) & (cx < g.width) & (cy >= 0) & (cy < g.height)
        if not inside.any():
            continue
        values = np.zeros((xs.size, g.channels))
        values[inside] = g.data[cy[inside], cx[inside]]
        out += weight[:, None] * values
    return out


def bilinear_sample(g: FeatureGrid, x: float, y: float) -> np.ndarray:
    """Bilinear interpolation of the 4 cells around (x, y); outside reads zeros"""
    return bilinear_sample_many(g, np.array([x]), np.array([y]))[0]


def cellwise_max(gs: Sequence[FeatureGrid]) -> FeatureGrid:
    """Element-wise maximum of same-shape grids"""
    if not gs:
        raise ValueError("no inputs")
    first = gs[0]
    for other in gs[1:]:
        if other.shape != first.shape:
            raise ShapeMismatchError(f"grid shape {other.shape} does not match {first.shape}")
    return FeatureGrid(np.maximum.reduce([grid.data for grid in gs]))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def gather_cells(g: FeatureGrid, indices: Sequence[int]) -> np.ndarray:
    """(k, C) vectors of the listed cells"""
    return g.cell_vectors()[np.asarray(list(indices), dtype=np.int64)]


def scatter_cells(channels: int, height: int, width: int, indices: Sequence[int], vectors: np.ndarray) -> FeatureGrid:
    """Zero grid with the listed cells set to the given vectors"""
    flat = np.zeros((height * width, channels))
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size:
        if idx.min() < 0 or idx.max() >= height * width:
            raise ShapeMismatchError("cell index outside the plane")
        flat[idx] = vectors
    return FeatureGrid(flat.reshape(height, width, channels))
