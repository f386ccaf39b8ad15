"""
Artifact Writer
===============
Every file the CLI produces goes through here: CSV tables are written to a
temporary file in the target directory and moved into place, heatmaps are
8-bit grayscale PGM images, messages are raw wire bytes.
"""

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Sequence, Union

import numpy as np
import pandas as pd
from PIL import Image
from pydantic import BaseModel

from utils.logger import app_logger as logger
from utils.tensor_core import CellMask, ScalarGrid

PathLike = Union[str, Path]


@contextmanager
def _atomic_target(path: Path) -> Iterator[Path]:
    """Yield a temp path next to `path`; rename over it on success"""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


# ============================================================================
# TABLES
# ============================================================================

def rows_to_frame(rows: Sequence[BaseModel], columns: List[str]) -> pd.DataFrame:
    """Frame with a fixed column order; empty input keeps the header"""
    return pd.DataFrame([row.model_dump() for row in rows], columns=columns)


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    with _atomic_target(path) as tmp:
        frame.to_csv(tmp, index=False, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_rows(rows: Sequence[BaseModel], columns: List[str], path: PathLike) -> Path:
    return write_csv(rows_to_frame(rows, columns), path)


# ============================================================================
# IMAGES
# ============================================================================

def to_gray(values: np.ndarray) -> np.ndarray:
    """[0, 1] reals -> uint8 gray levels"""
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def upscale(pixels: np.ndarray, scale: int) -> np.ndarray:
    """Integer nearest-neighbour upscale: every cell becomes a scale x scale block"""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    return np.repeat(np.repeat(pixels, scale, axis=0), scale, axis=1)


def write_pgm(pixels: np.ndarray, path: PathLike, scale: int = 1) -> Path:
    """Binary PGM (P5) of a 2-D uint8 array"""
    path = Path(path)
    image = Image.fromarray(np.ascontiguousarray(upscale(pixels, scale)))
    with _atomic_target(path) as tmp:
        image.save(tmp, format="PPM")
    return path


def activation_pixels(act: ScalarGrid) -> np.ndarray:
    return to_gray(act.data)


def mask_pixels(mask: CellMask) -> np.ndarray:
    """Shared cells white, everything else black"""
    return np.where(mask.bits, 255, 0).astype(np.uint8)


# ============================================================================
# MESSAGES
# ============================================================================

def write_message(payload: bytes, path: PathLike) -> Path:
    path = Path(path)
    with _atomic_target(path) as tmp:
        tmp.write_bytes(payload)
    return path


def read_message(path: PathLike) -> bytes:
    return Path(path).read_bytes()


def write_text(text: str, path: PathLike) -> Path:
    path = Path(path)
    with _atomic_target(path) as tmp:
        tmp.write_text(text, encoding="utf-8")
    return path
