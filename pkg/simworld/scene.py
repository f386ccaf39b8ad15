"""
Scene Generation
================
Deterministic synthetic BEV scenes: non-overlapping target boxes, thin wall
occluders and agent poses, all drawn from one SplitMix64 stream per seed.
"""

import logging
import math
from pathlib import Path
from typing import List, Union

from pydantic import ValidationError

from models.scene import AgentPose, Rect, SceneParams, SceneSpec
from utils.errors import ConfigError, SceneGenerationError
from utils.rng import SplitMix64

logger = logging.getLogger(f"fadelead.{__name__}")

OBJECT_MARGIN = 1


def _randint(rng: SplitMix64, low: int, high: int) -> int:
    """Uniform integer in [low, high]"""
    if high <= low:
        return low
    return min(high, low + int(rng.uniform(1)[0] * (high - low + 1)))


def _place_objects(rng: SplitMix64, params: SceneParams, height: int, width: int) -> List[Rect]:
    count = _randint(rng, params.object_count_min, params.object_count_max)
    objects: List[Rect] = []
    for i in range(count):
        for _ in range(params.max_retries):
            h = _randint(rng, params.object_size_min, params.object_size_max)
            w = _randint(rng, params.object_size_min, params.object_size_max)
            if h > height or w > width:
                continue
            y0 = _randint(rng, 0, height - h)
            x0 = _randint(rng, 0, width - w)
            rect = Rect(y0=y0, x0=x0, y1=y0 + h, x1=x0 + w)
            if not any(rect.overlaps(other, OBJECT_MARGIN) for other in objects):
                objects.append(rect)
                break
        else:
            raise SceneGenerationError(
                f"scene generation failed: object {i} of {count} not placed after {params.max_retries} retries"
            )
    return objects


def _place_occluders(rng: SplitMix64, params: SceneParams, height: int, width: int, objects: List[Rect]) -> List[Rect]:
    occluders: List[Rect] = []
    for i in range(params.occluder_count):
        for _ in range(params.max_retries):
            horizontal = rng.uniform(1)[0] < 0.5
            span = width if horizontal else height
            length = min(_randint(rng, params.occluder_length_min, params.occluder_length_max), span)
            if horizontal:
                y0 = _randint(rng, 0, height - 1)
                x0 = _randint(rng, 0, width - length)
                rect = Rect(y0=y0, x0=x0, y1=y0 + 1, x1=x0 + length)
            else:
                y0 = _randint(rng, 0, height - length)
                x0 = _randint(rng, 0, width - 1)
                rect = Rect(y0=y0, x0=x0, y1=y0 + length, x1=x0 + 1)
            if not any(rect.overlaps(obj, OBJECT_MARGIN) for obj in objects):
                occluders.append(rect)
                break
        else:
            raise SceneGenerationError(
                f"scene generation failed: occluder {i} not placed after {params.max_retries} retries"
            )
    return occluders


def _place_agents(rng: SplitMix64, params: SceneParams, height: int, width: int, blocked: List[Rect]) -> List[AgentPose]:
    agents: List[AgentPose] = []
    taken = set()
    for i in range(params.agents):
        for _ in range(params.max_retries):
            y = _randint(rng, 0, height - 1)
            x = _randint(rng, 0, width - 1)
            if (y, x) in taken or any(rect.contains(y, x) for rect in blocked):
                continue
            heading = float(rng.uniform(1, 0.0, 2.0 * math.pi)[0])
            agents.append(AgentPose(y=y + 0.5, x=x + 0.5, heading=heading))
            taken.add((y, x))
            break
        else:
            raise SceneGenerationError(
                f"scene generation failed: agent {i} not placed after {params.max_retries} retries"
            )
    return agents


def generate_scene(
    params: SceneParams,
    seed: int,
    height: int = 176,
    width: int = 48,
    meters_per_cell: float = 1.6,
) -> SceneSpec:
    """
    Deterministic scene for a seed.

    Objects never overlap (one free cell between boxes), occluders keep the
    same margin to objects, agents sit on free cells. Placement retries are
    bounded by params.max_retries per item.
    """
    rng = SplitMix64(seed)
    objects = _place_objects(rng, params, height, width)
    occluders = _place_occluders(rng, params, height, width, objects)
    agents = _place_agents(rng, params, height, width, objects + occluders)
    logger.debug(
        f"Scene seed={seed}: {len(objects)} objects, {len(occluders)} occluders, {len(agents)} agents"
    )
    return SceneSpec(
        height=height,
        width=width,
        meters_per_cell=meters_per_cell,
        objects=objects,
        occluders=occluders,
        agents=agents,
        seed=seed,
    )


def build_occlusion_scene(height: int = 24, width: int = 24, seed: int = 0, target_size: int = 3) -> SceneSpec:
    """
    Two-agent occlusion layout.

    Agent 0 (receiver) sits left of a full-height wall, the target box sits
    right of the wall and agent 1 (helper) further right with a clear view.
    Every straight ray from the receiver to the target crosses the wall.
    """
    if height < target_size + 6 or width < 12:
        raise SceneGenerationError("scene generation failed: occlusion layout needs a larger grid")
    rng = SplitMix64(seed)
    wall_x = width // 3
    wall = Rect(y0=1, x0=wall_x, y1=height - 1, x1=wall_x + 1)

    ty = _randint(rng, 2, height - 2 - target_size)
    tx = _randint(rng, wall_x + 2, min(wall_x + 4, width - target_size - 3))
    target = Rect(y0=ty, x0=tx, y1=ty + target_size, x1=tx + target_size)

    ry = _randint(rng, 2, height - 3)
    rx = _randint(rng, 1, max(1, wall_x - 3))
    hy = _randint(rng, 2, height - 3)
    hx = _randint(rng, target.x1 + 1, width - 2)

    agents = [
        AgentPose(y=ry + 0.5, x=rx + 0.5, heading=0.0),
        AgentPose(y=hy + 0.5, x=hx + 0.5, heading=math.pi),
    ]
    return SceneSpec(height=height, width=width, objects=[target], occluders=[wall], agents=agents, seed=seed)


# ============================================================================
# SCENE FILES
# ============================================================================

def save_scene(scene: SceneSpec, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(scene.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def load_scene(path: Union[str, Path]) -> SceneSpec:
    path = Path(path)
    try:
        return SceneSpec.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        first = e.errors()[0]
        field_path = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"invalid scene file {path}: {first['msg']}", field_path=field_path) from e
