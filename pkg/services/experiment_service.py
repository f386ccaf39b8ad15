"""
Experiment Service
==================
Business logic behind the CLI: ratio/strategy sweeps, curriculum replays,
bandwidth tables and heatmap rendering.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from models.experiment import ExperimentConfig
from models.metrics import (
    BANDWIDTH_COLUMNS,
    CURRICULUM_COLUMNS,
    SWEEP_COLUMNS,
    BandwidthRow,
    CurriculumRow,
    MetricRow,
)
from models.scene import SceneSpec
from pipeline.cbp import CurriculumState, curriculum_step, initial_state
from pipeline.codec import SIZE_MODELS, size_model
from services.artifact_writer import (
    activation_pixels,
    mask_pixels,
    write_message,
    write_pgm,
    write_rows,
    write_text,
)
from simworld.round import RoundOrchestrator, RoundResult, curriculum_for
from simworld.scene import generate_scene
from simworld.strategies import PRED_FG
from utils.logger import LogContext, log_function_call
from utils.logger import app_logger as logger
from utils.tensor_core import ratio_count
from utils.templates import render_template

ORDERED_MODELS = ("dense_fp32", "sparse_fp32", "sparse_fp16_compressed")


@dataclass(frozen=True)
class RenderOutput:
    directory: Path
    files: List[Path]
    summary: str


def state_at(config: ExperimentConfig, epoch: int, train: bool) -> CurriculumState:
    """Curriculum state after `epoch` steps (inference state is epoch-free)"""
    state = curriculum_for(config, train)
    if not train:
        return state
    for _ in range(epoch):
        state = curriculum_step(state)
    return state


class ExperimentService:
    """Service for experiment runs driven by one ExperimentConfig"""

    def __init__(self, config: ExperimentConfig):
        self.config = config

    # ========================================================================
    # SCENES
    # ========================================================================

    def scene_for(self, seed: int) -> SceneSpec:
        height, width = self.config.grid.dims
        return generate_scene(self.config.scene, seed, height, width, self.config.grid.meters_per_cell)

    # ========================================================================
    # SWEEP
    # ========================================================================

    @log_function_call()
    def sweep_seed(self, seed: int) -> List[MetricRow]:
        """Every (epoch, strategy, ratio) round of one seed"""
        cfg = self.config
        train = cfg.mode == "train"
        orchestrator = RoundOrchestrator.from_config(cfg)
        scene = self.scene_for(seed)
        observations = orchestrator.observe_all(scene)

        rows: List[MetricRow] = []
        for epoch in range(cfg.epochs):
            state = state_at(cfg, epoch, train)
            for strategy in cfg.pipeline.strategies:
                for ratio in cfg.pipeline.ratios:
                    result = orchestrator.run(
                        scene, observations, strategy, ratio, state, train=train, seed=seed, epoch=epoch
                    )
                    rows.extend(result.rows)
        return rows

    def run_sweep(self) -> List[MetricRow]:
        """
        All seeds, merged in seed order and sorted by the row key

        Returns:
            Sorted MetricRows
        """
        cfg = self.config
        with LogContext(logger, "sweep", seeds=len(cfg.seeds), parallel=cfg.parallel):
            if cfg.parallel > 1 and len(cfg.seeds) > 1:
                with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
                    per_seed = list(pool.map(self.sweep_seed, cfg.seeds))
            else:
                per_seed = [self.sweep_seed(seed) for seed in cfg.seeds]
        rows = [row for seed_rows in per_seed for row in seed_rows]
        return sorted(rows, key=MetricRow.sort_key)

    def write_sweep(self, out_dir: Optional[Path] = None) -> Path:
        path = Path(out_dir or self.config.output.out_dir) / self.config.output.sweep_csv
        return write_rows(self.run_sweep(), SWEEP_COLUMNS, path)

    # ========================================================================
    # CURRICULUM REPLAY
    # ========================================================================

    def paces(self) -> List[tuple]:
        c = self.config.curriculum
        return [(c.r0, c.gamma)] + [(p.r0, p.gamma) for p in c.paces]

    def replay_curriculum(self) -> List[CurriculumRow]:
        """
        Schedule trace per pace with the share counts of agent 0.

        Uses the first seed's scene, the first ratio and Pred-FG sharing in
        training mode. Mining depends only on r, so each distinct r is run
        once per pace.
        """
        cfg = self.config
        c = cfg.curriculum
        orchestrator = RoundOrchestrator.from_config(cfg)
        scene = self.scene_for(cfg.seeds[0])
        obs = orchestrator.observe(scene, 0)
        agent = orchestrator.get_agent(0)
        ratio = cfg.pipeline.ratios[0]

        rows: List[CurriculumRow] = []
        for pace, (r0, gamma) in enumerate(self.paces()):
            state = initial_state(r0, gamma, c.period, c.tau, c.final_cutoff_epoch, c.cutoff)
            counts: Dict[float, tuple] = {}
            for _ in range(c.replay_epochs):
                if state.r_current not in counts:
                    plan = agent.prepare_message(obs, PRED_FG, ratio, state, train=True)
                    counts[state.r_current] = (plan.fg_mask.popcount(), len(plan.selected_bg), plan.shared_cells)
                fg_cells, bg_selected, shared_cells = counts[state.r_current]
                rows.append(CurriculumRow(
                    pace=pace,
                    r0=r0,
                    gamma=gamma,
                    epoch=state.epoch,
                    r_current=state.r_current,
                    fg_cells=fg_cells,
                    bg_selected=bg_selected,
                    shared_cells=shared_cells,
                ))
                state = curriculum_step(state)
        return rows

    def write_curriculum(self, out_dir: Optional[Path] = None) -> Path:
        path = Path(out_dir or self.config.output.out_dir) / self.config.output.curriculum_csv
        return write_rows(self.replay_curriculum(), CURRICULUM_COLUMNS, path)

    # ========================================================================
    # BANDWIDTH
    # ========================================================================

    def bandwidth_table(self) -> List[BandwidthRow]:
        """
        Bits per message and per round for each (ratio, size model).

        ordering_holds compares all three models at the ratio regardless of
        which ones the table lists.
        """
        cfg = self.config
        height, width = cfg.grid.dims
        p = cfg.pipeline
        bw = cfg.bandwidth

        rows: List[BandwidthRow] = []
        for ratio in p.ratios:
            sizes = {
                name: size_model(name, height, width, ratio, p.channels, p.compression_ratio)
                for name in ORDERED_MODELS
            }
            ordering = sizes["dense_fp32"] > sizes["sparse_fp32"] > sizes["sparse_fp16_compressed"]
            for name in bw.models:
                model = SIZE_MODELS[name]
                bits = sizes[name]
                bits_per_round = bits * bw.neighbors
                mbps = bits_per_round * bw.rate_hz / 1e6
                rows.append(BandwidthRow(
                    ratio=ratio,
                    model=name,
                    cells=height * width if model.dense else ratio_count(ratio, height * width),
                    channels=p.compressed_channels if model.compressed else p.channels,
                    bits_per_message=bits,
                    bytes_per_message=bits / 8,
                    bits_per_round=bits_per_round,
                    mbps=mbps,
                    within_link_limit=mbps < bw.link_limit_mbps,
                    ordering_holds=ordering,
                ))
        return rows

    def bandwidth_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.bandwidth_table()], columns=BANDWIDTH_COLUMNS)

    def write_bandwidth(self, out_dir: Optional[Path] = None) -> Path:
        path = Path(out_dir or self.config.output.out_dir) / self.config.output.bandwidth_csv
        return write_rows(self.bandwidth_table(), BANDWIDTH_COLUMNS, path)

    # ========================================================================
    # RENDER
    # ========================================================================

    def render_round(self) -> RoundResult:
        """First seed, first strategy, first ratio, epoch 0 of the configured mode"""
        cfg = self.config
        train = cfg.mode == "train"
        orchestrator = RoundOrchestrator.from_config(cfg)
        scene = self.scene_for(cfg.seeds[0])
        return orchestrator.run(
            scene,
            orchestrator.observe_all(scene),
            cfg.pipeline.strategies[0],
            cfg.pipeline.ratios[0],
            state_at(cfg, 0, train),
            train=train,
            seed=cfg.seeds[0],
        )

    def render(self, out_dir: Optional[Path] = None) -> RenderOutput:
        cfg = self.config
        directory = Path(out_dir or cfg.output.out_dir) / cfg.output.heatmap_dir
        start_time = time.perf_counter()
        result = self.render_round()
        files = export_heatmaps(result, directory, cfg.output.heatmap_scale)
        summary = round_summary(result, cfg)
        files.append(write_text(summary, directory / "summary.txt"))
        audit = json.dumps(result.memory.export_to_dict(include_timing=False), indent=2) + "\n"
        files.append(write_text(audit, directory / "round.json"))
        logger.info(f"Rendered {len(files)} files in {time.perf_counter() - start_time:.2f}s")
        return RenderOutput(directory=directory, files=files, summary=summary)


def export_heatmaps(result: RoundResult, directory: Path, scale: int = 1) -> List[Path]:
    """
    Pre-fusion, post-fusion and shared-mask images plus the wire message of
    every agent.

    Returns:
        Written paths in agent order
    """
    directory = Path(directory)
    files: List[Path] = []
    for art in result.artifacts:
        stem = f"agent{art.agent}"
        files.append(write_pgm(activation_pixels(art.pre_fusion), directory / f"{stem}_pre.pgm", scale))
        files.append(write_pgm(activation_pixels(art.post_fusion), directory / f"{stem}_post.pgm", scale))
        files.append(write_pgm(mask_pixels(art.shared_mask), directory / f"{stem}_shared.pgm", scale))
        files.append(write_message(art.payload, directory / f"{stem}.msg"))
    return files


def round_summary(result: RoundResult, config: ExperimentConfig) -> str:
    first = result.rows[0] if result.rows else None
    rows = [
        {**row.model_dump(), "baseline_recall": art.baseline.recall}
        for row, art in zip(result.rows, result.artifacts)
    ]
    return render_template(
        "round_summary",
        seed=first.seed if first else config.seeds[0],
        epoch=first.epoch if first else 0,
        strategy=first.strategy if first else config.pipeline.strategies[0],
        ratio=first.ratio if first else config.pipeline.ratios[0],
        rows=rows,
    )


def run_sweep(config: ExperimentConfig, seeds: Optional[Sequence[int]] = None) -> List[MetricRow]:
    if seeds is not None:
        config = config.with_overrides(seeds=list(seeds))
    return ExperimentService(config).run_sweep()


def replay_curriculum(config: ExperimentConfig) -> List[CurriculumRow]:
    return ExperimentService(config).replay_curriculum()


def bandwidth_table(config: ExperimentConfig) -> List[BandwidthRow]:
    return ExperimentService(config).bandwidth_table()
