"""
Ray-Cast Observation
====================
Per-agent density, visibility, oracle features and oracle confidence from
2D ray marching over the global BEV plane.

Each azimuth casts one unlimited beam that stops at the first target or
occluder cell, plus one ground beam per ring range that terminates on the
ground at that range. Every termination adds one hit to its cell.
Visibility is the number of unlimited beams reaching a cell divided by the
number that would reach it on an empty plane.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from models.scene import SceneSpec
from pipeline.fca import ConfidenceGrid
from utils.rng import SplitMix64
from utils.tensor_core import CellMask, FeatureGrid, ScalarGrid, conv2d_3x3

logger = logging.getLogger(f"fadelead.{__name__}")

SIGNATURE_LOW = 0.5
SIGNATURE_HIGH = 1.5
_SIGNATURE_TAG = 1_000_003


@dataclass(frozen=True, eq=False)
class RayCast:
    density: np.ndarray
    reached: np.ndarray
    ideal: np.ndarray


@dataclass(frozen=True, eq=False)
class AgentObservation:
    agent_index: int
    density: ScalarGrid
    visibility: ScalarGrid
    features: FeatureGrid
    conf: ConfidenceGrid
    gt_fg: CellMask
    gt_bg: CellMask


def _first_visits(cells: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Cell ids entered by each ray, each counted once per ray"""
    ids = np.where(valid, cells, -1)
    previous = np.concatenate([np.full((ids.shape[0], 1), -2), ids[:, :-1]], axis=1)
    entered = (ids >= 0) & (ids != previous)
    return ids[entered]


def cast_rays(
    scene: SceneSpec,
    agent_index: int,
    n_rays: int,
    step: float = 0.25,
    ring_ranges: Sequence[float] = (),
) -> RayCast:
    if not 0 <= agent_index < len(scene.agents):
        raise IndexError(f"agent index {agent_index} outside 0..{len(scene.agents) - 1}")
    if n_rays < 1:
        raise ValueError("n_rays must be at least 1")

    h, w = scene.height, scene.width
    pose = scene.agents[agent_index]
    max_range = math.hypot(h, w) + 1.0
    n_steps = int(math.ceil(max_range / step))
    t = step * np.arange(1, n_steps + 1)
    angles = pose.heading + 2.0 * math.pi * np.arange(n_rays) / n_rays

    xs = pose.x + np.cos(angles)[:, None] * t[None, :]
    ys = pose.y + np.sin(angles)[:, None] * t[None, :]
    ix = np.floor(xs).astype(np.int64)
    iy = np.floor(ys).astype(np.int64)
    inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    cells = np.where(inside, iy * w + ix, -1)

    obstacles = scene.obstacle_mask().reshape(-1)
    hit = inside & obstacles[np.clip(cells, 0, None)]
    stop = ~inside | hit
    has_stop = stop.any(axis=1)
    first = np.where(has_stop, np.argmax(stop, axis=1), n_steps)
    rows = np.arange(n_rays)
    capped = np.minimum(first, n_steps - 1)
    terminal_hit = has_stop & hit[rows, capped]

    steps = np.arange(n_steps)[None, :]
    valid = (steps < first[:, None]) | ((steps == first[:, None]) & terminal_hit[:, None])

    total = h * w
    reached = np.bincount(_first_visits(cells, valid), minlength=total)
    ideal = np.bincount(_first_visits(cells, inside), minlength=total)

    density = np.bincount(cells[rows[terminal_hit], first[terminal_hit]], minlength=total).astype(np.float64)
    for ring in ring_ranges:
        k = int(round(ring / step)) - 1
        if k < 0 or k >= n_steps:
            continue
        on_ground = k < first
        # a ring beam that meets an obstacle first terminates there
        blocked = ~on_ground & terminal_hit
        density += np.bincount(cells[on_ground, k], minlength=total)
        density += np.bincount(cells[rows[blocked], first[blocked]], minlength=total)

    return RayCast(
        density=density.reshape(h, w),
        reached=reached.reshape(h, w).astype(np.float64),
        ideal=ideal.reshape(h, w).astype(np.float64),
    )


def visibility_map(scene: SceneSpec, cast: RayCast) -> np.ndarray:
    """Reached / ideal per cell; each target box takes its best cell's value"""
    vis = np.divide(cast.reached, cast.ideal, out=np.zeros_like(cast.reached), where=cast.ideal > 0)
    vis = np.clip(vis, 0.0, 1.0)
    for rect in scene.objects:
        block = vis[rect.y0:rect.y1, rect.x0:rect.x1]
        block[...] = block.max()
    return vis


def object_signatures(scene: SceneSpec, channels: int) -> np.ndarray:
    """(n_objects, C) signatures uniform in [0.5, 1.5), one stream per object"""
    root = SplitMix64(scene.seed ^ _SIGNATURE_TAG)
    if not scene.objects:
        return np.zeros((0, channels))
    return np.stack([
        root.fork(i).uniform(channels, SIGNATURE_LOW, SIGNATURE_HIGH) for i in range(len(scene.objects))
    ])


def oracle_features(scene: SceneSpec, agent_index: int, vis: np.ndarray, channels: int, noise_sigma: float) -> np.ndarray:
    h, w = scene.height, scene.width
    if noise_sigma > 0:
        noise_rng = SplitMix64(scene.seed).fork(agent_index)
        data = noise_rng.uniform(h * w * channels, -noise_sigma, noise_sigma).reshape(h, w, channels)
    else:
        data = np.zeros((h, w, channels))
    labels = scene.object_labels()
    seen = (labels >= 0) & (vis > 0)
    if seen.any():
        signatures = object_signatures(scene, channels)
        data[seen] = signatures[labels[seen]] * vis[seen][:, None]
    return data


def _box_blur(values: np.ndarray) -> np.ndarray:
    kernel = np.full((1, 1, 3, 3), 1.0 / 9.0)
    return conv2d_3x3(FeatureGrid(values[..., None]), kernel).data[..., 0]


def oracle_confidence(scene: SceneSpec, vis: np.ndarray) -> np.ndarray:
    """
    3x3 box blur of the visibility-weighted target indicator, scaled by the
    blur peak of the plain indicator so a fully visible box reaches 1.
    """
    indicator = scene.target_mask().astype(np.float64)
    if not indicator.any():
        return np.zeros_like(indicator)
    peak = _box_blur(indicator).max()
    return np.clip(_box_blur(indicator * vis) / peak, 0.0, 1.0)


def observe(
    scene: SceneSpec,
    agent_index: int,
    n_rays: int,
    channels: int = 256,
    noise_sigma: float = 0.05,
    ring_ranges: Sequence[float] = (6.0, 12.0, 24.0),
    ray_step: float = 0.25,
) -> AgentObservation:
    cast = cast_rays(scene, agent_index, n_rays, ray_step, ring_ranges)
    vis = visibility_map(scene, cast)
    target = scene.target_mask()
    logger.debug(
        f"Agent {agent_index} observed {int((vis > 0).sum())} visible cells, {int(cast.density.sum())} hits"
    )
    return AgentObservation(
        agent_index=agent_index,
        density=ScalarGrid(cast.density),
        visibility=ScalarGrid(vis),
        features=FeatureGrid(oracle_features(scene, agent_index, vis, channels, noise_sigma)),
        conf=ConfidenceGrid.from_array(oracle_confidence(scene, vis)),
        gt_fg=CellMask(target),
        gt_bg=CellMask(~target),
    )

