"""
Sparse Message Codec
====================
Channel compression, binary16 quantization, the little-endian wire format,
size accounting and per-receiver budget admission.

Wire layout (version 1):

    offset  size  field
    0       4     agent_id            u32
    4       2     height              u16
    6       2     width               u16
    8       2     channels_compressed u16
    10      4     cell_count (k)      u32
    14      1     version             u8 = 1
    15      1     pad                 u8 = 0
    16      4k    indices             u32, strictly ascending
    16+4k   2kC'  payload             binary16, cell-major

The per-cell flag field is implicit in version 1: it takes no bytes and
decodes as all ones.
"""

import struct
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from utils.errors import IndexOrderError, MalformedMessageError, ShapeMismatchError
from utils.logger import codec_logger as logger
from utils.logger import log_admission
from utils.rng import SplitMix64
from utils.templates import render_template
from utils.tensor_core import CellMask, FeatureGrid, LinearMap, SparseCells, ratio_count, scatter_cells

WIRE_VERSION = 1
HEADER = struct.Struct("<IHHHIBB")
HEADER_BYTES = HEADER.size
HEADER_BITS = HEADER_BYTES * 8
INDEX_BITS = 32
VALUE_BITS = 16
F16_MAX = 65504.0

_U16_MAX = 0xFFFF
_U32_MAX = 0xFFFFFFFF


# ============================================================================
# BINARY16
# ============================================================================

def quantize_array(values: np.ndarray) -> np.ndarray:
    """float64 -> binary16 bit patterns, round-to-nearest-even, overflow to inf"""
    with np.errstate(over="ignore"):
        return np.asarray(values, dtype=np.float64).astype(np.float16).view(np.uint16)


def dequantize_array(bits: np.ndarray) -> np.ndarray:
    return np.asarray(bits, dtype=np.uint16).view(np.float16).astype(np.float64)


def quantize_f16(x: float) -> int:
    return int(quantize_array(np.array([x]))[0])


def dequantize_f16(b: int) -> float:
    return float(dequantize_array(np.array([b], dtype=np.uint16))[0])


def clamp_f16(values: np.ndarray) -> np.ndarray:
    """Clamp dequantized infinities to the largest finite binary16"""
    return np.clip(values, -F16_MAX, F16_MAX)


# ============================================================================
# MESSAGE
# ============================================================================

@dataclass(frozen=True, eq=False)
class SparseMessage:
    """Decoded message; payload holds binary16 bit patterns shaped (k, C')"""

    agent_id: int
    height: int
    width: int
    channels_compressed: int
    indices: np.ndarray
    payload: np.ndarray

    def __post_init__(self):
        if not 0 <= self.agent_id <= _U32_MAX:
            raise MalformedMessageError(f"agent_id {self.agent_id} does not fit u32")
        for name in ("height", "width", "channels_compressed"):
            value = getattr(self, name)
            if not 1 <= value <= _U16_MAX:
                raise MalformedMessageError(f"{name} {value} does not fit a positive u16")
        idx = np.array(self.indices, dtype=np.uint32).reshape(-1)
        payload = np.array(self.payload, dtype=np.uint16)
        if payload.size != idx.size * self.channels_compressed:
            raise MalformedMessageError(
                f"malformed message: payload holds {payload.size} values, expected {idx.size * self.channels_compressed}"
            )
        payload = payload.reshape(idx.size, self.channels_compressed)
        if idx.size > 1 and not (np.diff(idx.astype(np.int64)) > 0).all():
            raise IndexOrderError("malformed message: cell indices not strictly ascending")
        if idx.size and int(idx[-1]) >= self.height * self.width:
            raise MalformedMessageError(f"malformed message: cell index {int(idx[-1])} outside {self.height}x{self.width}")
        idx.flags.writeable = False
        payload.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "payload", payload)

    @property
    def cell_count(self) -> int:
        return int(self.indices.size)

    @property
    def mask_bits(self) -> np.ndarray:
        return np.ones(self.cell_count, dtype=bool)

    def values(self) -> np.ndarray:
        """Dequantized payload, clamped to the finite binary16 range"""
        return clamp_f16(dequantize_array(self.payload))

    def size_bits(self) -> int:
        return message_size_bits(self.cell_count, self.channels_compressed)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMessage):
            return NotImplemented
        return (
            (self.agent_id, self.height, self.width, self.channels_compressed)
            == (other.agent_id, other.height, other.width, other.channels_compressed)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.payload, other.payload)
        )

    __hash__ = None


def build_message(agent_id: int, height: int, width: int, cells: SparseCells) -> SparseMessage:
    """Quantize compressed cells into a message"""
    return SparseMessage(
        agent_id=agent_id,
        height=height,
        width=width,
        channels_compressed=cells.channels,
        indices=cells.indices,
        payload=quantize_array(cells.vectors),
    )


def serialize_message(msg: SparseMessage) -> bytes:
    header = HEADER.pack(
        msg.agent_id, msg.height, msg.width, msg.channels_compressed, msg.cell_count, WIRE_VERSION, 0
    )
    return header + msg.indices.astype("<u4").tobytes() + msg.payload.astype("<u2").tobytes()


def encode_message(agent_id: int, height: int, width: int, cells: SparseCells) -> bytes:
    data = serialize_message(build_message(agent_id, height, width, cells))
    logger.debug(f"Encoded message from agent {agent_id}: {cells.count} cells, {len(data)} bytes")
    return data


def decode_message(data: bytes) -> SparseMessage:
    if len(data) < HEADER_BYTES:
        raise MalformedMessageError(f"malformed message: {len(data)} bytes is shorter than the header")
    agent_id, height, width, channels, count, version, _pad = HEADER.unpack_from(data, 0)
    if version != WIRE_VERSION:
        raise MalformedMessageError(f"malformed message: unsupported version {version}")
    expected = HEADER_BYTES + 4 * count + 2 * count * channels
    if len(data) != expected:
        raise MalformedMessageError(f"malformed message: expected {expected} bytes, got {len(data)}")
    index_end = HEADER_BYTES + 4 * count
    indices = np.frombuffer(data, dtype="<u4", count=count, offset=HEADER_BYTES)
    payload = np.frombuffer(data, dtype="<u2", count=count * channels, offset=index_end)
    return SparseMessage(
        agent_id=agent_id,
        height=height,
        width=width,
        channels_compressed=channels,
        indices=indices,
        payload=payload,
    )


def dump_message(data: bytes, max_cells: Optional[int] = None) -> str:
    """Human-readable rendering of a message file"""
    if max_cells is not None and max_cells < 0:
        raise ValueError(f"max_cells must be >= 0, got {max_cells}")
    msg = decode_message(data)
    values = msg.values()
    shown = msg.cell_count if max_cells is None else min(max_cells, msg.cell_count)
    cells = [
        {
            "index": int(msg.indices[i]),
            "y": int(msg.indices[i]) // msg.width,
            "x": int(msg.indices[i]) % msg.width,
            "values": [float(v) for v in values[i]],
        }
        for i in range(shown)
    ]
    return render_template(
        "message_dump",
        msg=msg,
        version=WIRE_VERSION,
        total_bytes=len(data),
        size_bits=msg.size_bits(),
        cells=cells,
        hidden=msg.cell_count - shown,
    )


# ============================================================================
# SIZE MODELS
# ============================================================================

def message_size_bits(
    k: int,
    c: int,
    index_bits: int = INDEX_BITS,
    value_bits: int = VALUE_BITS,
    header_bits: int = HEADER_BITS,
) -> int:
    """header_bits + k * index_bits + k * c * value_bits"""
    if k < 0 or c < 0:
        raise ValueError("cell and channel counts must be non-negative")
    return header_bits + k * index_bits + k * c * value_bits


class SizeModel(BaseModel):
    """Bit cost of one message under a sharing scheme"""

    model_config = ConfigDict(frozen=True)

    name: str
    header_bits: int = Field(ge=0)
    index_bits: int = Field(ge=0)
    value_bits: int = Field(gt=0)
    dense: bool = False
    compressed: bool = False
    label: str = ""


SIZE_MODELS: Dict[str, SizeModel] = {
    "dense_fp32": SizeModel(
        name="dense_fp32", header_bits=0, index_bits=0, value_bits=32, dense=True,
        label="dense fp32 feature map, no channel compression",
    ),
    "sparse_fp32": SizeModel(
        name="sparse_fp32", header_bits=0, index_bits=INDEX_BITS, value_bits=32,
        label="sparse cells, fp32 C channels (Where2Comm / CORE)",
    ),
    "sparse_fp16_compressed": SizeModel(
        name="sparse_fp16_compressed", header_bits=HEADER_BITS, index_bits=INDEX_BITS, value_bits=VALUE_BITS,
        compressed=True, label="sparse cells, fp16 C/R channels (CoSDH / FadeLead)",
    ),
}


def size_model(name: str, height: int, width: int, ratio: float, channels: int = 256, compression_ratio: int = 16) -> int:
    """Bits per message for a named model at a spatial selection ratio"""
    try:
        model = SIZE_MODELS[name]
    except KeyError:
        raise ValueError(f"unknown size model: {name}") from None
    cells = height * width if model.dense else ratio_count(ratio, height * width)
    c = channels // compression_ratio if model.compressed else channels
    return message_size_bits(cells, c, model.index_bits, model.value_bits, model.header_bits)


# ============================================================================
# BUDGET ADMISSION
# ============================================================================

class BudgetLedger(BaseModel):
    """Bits consumed per (sender, receiver) link in one round"""

    model_config = ConfigDict(frozen=True)

    budget_bits: int = Field(ge=0)
    consumed: Dict[Tuple[int, int], int] = Field(default_factory=dict)

    def inbound(self, receiver: int) -> int:
        return sum(bits for (_, dst), bits in self.consumed.items() if dst == receiver)

    def outbound(self, sender: int) -> int:
        return sum(bits for (src, _), bits in self.consumed.items() if src == sender)


class AdmissionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    ledger: BudgetLedger
    accepted: bool
    bits: int
    inbound_total: int


def admit(ledger: BudgetLedger, sender: int, receiver: int, bits: int) -> AdmissionResult:
    """Accept iff the receiver's inbound total plus bits stays within the budget"""
    if bits < 0:
        raise ValueError("message size must be non-negative")
    current = ledger.inbound(receiver)
    accepted = current + bits <= ledger.budget_bits
    if accepted:
        consumed = dict(ledger.consumed)
        consumed[(sender, receiver)] = consumed.get((sender, receiver), 0) + bits
        ledger = ledger.model_copy(update={"consumed": consumed})
        current += bits
    log_admission(sender, receiver, bits, current, ledger.budget_bits, accepted)
    return AdmissionResult(ledger=ledger, accepted=accepted, bits=bits, inbound_total=current)


# ============================================================================
# CHANNEL COMPRESSION
# ============================================================================

@dataclass(frozen=True, eq=False)
class CompressionPair:
    """down: C -> C/R; up is its transpose"""

    down: LinearMap
    up: LinearMap

    def __post_init__(self):
        if not np.array_equal(self.up.weights, self.down.weights.T):
            raise ShapeMismatchError("up weights must be the transpose of down weights")

    @property
    def channels(self) -> int:
        return self.down.cols

    @property
    def compressed(self) -> int:
        return self.down.rows

    @classmethod
    def from_down(cls, weights: np.ndarray) -> "CompressionPair":
        weights = np.asarray(weights, dtype=np.float64)
        return cls(
            down=LinearMap(weights, np.zeros(weights.shape[0])),
            up=LinearMap(weights.T, np.zeros(weights.shape[1])),
        )

    @classmethod
    def seeded(cls, channels: int, ratio: int, seed: int = 0) -> "CompressionPair":
        """Seeded down map with Gram-Schmidt orthonormal rows"""
        if ratio < 1 or channels % ratio:
            raise ShapeMismatchError(f"channels {channels} not divisible by compression ratio {ratio}")
        rows = channels // ratio
        raw = LinearMap.seeded(rows, channels, SplitMix64(seed), with_bias=False).weights
        q, r = np.linalg.qr(raw.T)
        # positive diagonal makes QR agree with classical Gram-Schmidt
        signs = np.where(np.diag(r) < 0, -1.0, 1.0)
        return cls.from_down((q * signs).T)

    @classmethod
    def selector(cls, channels: int, compressed: int) -> "CompressionPair":
        """Keeps the first `compressed` coordinates"""
        return cls.from_down(np.eye(compressed, channels))


def compress_cells(cells: SparseCells, pair: CompressionPair) -> SparseCells:
    if cells.channels != pair.channels:
        raise ShapeMismatchError(f"compressor expects {pair.channels} channels, cells have {cells.channels}")
    if cells.count == 0:
        return SparseCells.empty(pair.compressed)
    return SparseCells(cells.indices, pair.down.apply_vectors(cells.vectors))


def decompress_scatter(msg: SparseMessage, pair: CompressionPair) -> Tuple[FeatureGrid, CellMask]:
    """Zero grid with every listed cell set to up(payload); also returns the cell mask"""
    if msg.channels_compressed != pair.compressed:
        raise ShapeMismatchError(
            f"message carries {msg.channels_compressed} channels, decompressor expects {pair.compressed}"
        )
    total = msg.height * msg.width
    if msg.cell_count and int(msg.indices.max()) >= total:
        raise MalformedMessageError("cell index outside the plane")
    indices = msg.indices.astype(np.int64)
    vectors = pair.up.apply_vectors(msg.values()) if msg.cell_count else np.zeros((0, pair.channels))
    grid = scatter_cells(pair.channels, msg.height, msg.width, indices, vectors)
    return grid, CellMask.from_indices(msg.height, msg.width, indices)
