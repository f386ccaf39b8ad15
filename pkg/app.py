"""
FadeLead Command Line
=====================
Configuration-driven experiment runner for the collaborative perception
simulator.

Subcommands:
    sweep            ratio x strategy sweep -> sweep CSV
    curriculum       background-ratio schedule replay -> curriculum CSV
    bandwidth        codec size-model comparison -> bandwidth CSV
    render           one round -> PGM heatmaps, message files, summary
    dump-message     human-readable dump of a message file
    validate-config  load and validate a config file
    scene            generate a scene file or summarise one

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from models.experiment import ExperimentConfig, load_experiment_config
from pipeline.codec import dump_message
from services.artifact_writer import read_message
from services.experiment_service import ExperimentService
from simworld.scene import load_scene, save_scene
from utils.config import get_settings
from utils.errors import ConfigError, FadeLeadError
from utils.logger import initialize_logging, log_error
from utils.templates import render_template

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def parse_seeds(text: Optional[str]) -> Optional[List[int]]:
    """'1,2,3' -> [1, 2, 3]"""
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}", field_path="seeds") from None


def non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="experiment config JSON (defaults when omitted)")
    common.add_argument("--out", type=Path, default=None, help="output directory (overrides output.out_dir)")
    common.add_argument("--seeds", default=None, help="comma-separated scene seeds, e.g. 0,1,2")
    common.add_argument("--mode", choices=["train", "infer"], default=None, help="sharing mode")
    common.add_argument("--parallel", type=int, default=None, help="seed workers")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on the console")

    parser = argparse.ArgumentParser(prog="fadelead", description="Collaborative perception sharing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("sweep", parents=[common], help="ratio x strategy sweep")
    sub.add_parser("curriculum", parents=[common], help="curriculum schedule replay")
    sub.add_parser("bandwidth", parents=[common], help="codec size-model table")
    sub.add_parser("render", parents=[common], help="heatmaps and messages of one round")
    sub.add_parser("validate-config", parents=[common], help="validate a config file")

    dump = sub.add_parser("dump-message", parents=[common], help="print a message file")
    dump.add_argument("message", type=Path)
    dump.add_argument("--max-cells", type=non_negative_int, default=None, help="cells to print (all when omitted)")

    scene = sub.add_parser("scene", parents=[common], help="generate or summarise a scene file")
    scene.add_argument("--read", type=Path, default=None, help="scene file to summarise")
    scene.add_argument("--write", type=Path, default=None, help="write the first seed's scene here")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file plus command-line overrides"""
    config = load_experiment_config(args.config)
    parallel = args.parallel
    if parallel is None and "parallel" not in config.model_fields_set:
        parallel = get_settings().default_parallel
    return config.with_overrides(seeds=parse_seeds(args.seeds), mode=args.mode, parallel=parallel)


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_sweep(config: ExperimentConfig, args: argparse.Namespace) -> int:
    path = ExperimentService(config).write_sweep(args.out)
    print(path)
    return EXIT_OK


def cmd_curriculum(config: ExperimentConfig, args: argparse.Namespace) -> int:
    path = ExperimentService(config).write_curriculum(args.out)
    print(path)
    return EXIT_OK


def cmd_bandwidth(config: ExperimentConfig, args: argparse.Namespace) -> int:
    service = ExperimentService(config)
    path = service.write_bandwidth(args.out)
    print(service.bandwidth_frame().to_string(index=False))
    print(path)
    return EXIT_OK


def cmd_render(config: ExperimentConfig, args: argparse.Namespace) -> int:
    output = ExperimentService(config).render(args.out)
    print(output.summary, end="")
    print(output.directory)
    return EXIT_OK


def cmd_dump_message(config: ExperimentConfig, args: argparse.Namespace) -> int:
    print(dump_message(read_message(args.message), args.max_cells), end="")
    return EXIT_OK


def cmd_validate_config(config: ExperimentConfig, args: argparse.Namespace) -> int:
    print(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_scene(config: ExperimentConfig, args: argparse.Namespace) -> int:
    if args.read is not None:
        scene = load_scene(args.read)
    else:
        scene = ExperimentService(config).scene_for(config.seeds[0])
        if args.write is not None:
            save_scene(scene, args.write)
    print(render_template("scene_summary", scene=scene), end="")
    return EXIT_OK


COMMANDS = {
    "sweep": cmd_sweep,
    "curriculum": cmd_curriculum,
    "bandwidth": cmd_bandwidth,
    "render": cmd_render,
    "dump-message": cmd_dump_message,
    "validate-config": cmd_validate_config,
    "scene": cmd_scene,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    initialize_logging(
        verbose=args.verbose,
        log_dir=settings.log_dir if settings.file_logging else None,
        console_level=settings.console_level,
    )

    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FadeLeadError, OSError) as e:
        log_error(e, f"fadelead {args.command}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
