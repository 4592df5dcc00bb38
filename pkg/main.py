"""
SurfMorph Surface Morphometry Pipeline
Main Application Entry Point
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add modules to path
sys.path.append(str(Path(__file__).parent))

from config.app_config import AppConfig
from modules import exporter, surface_io, volume_io
from modules.data_manager import DataManager
from modules.errors import ConfigError, SurfaceError
from modules.phantoms import PHANTOMS, write_phantom
from modules.pipeline import run_pipeline

logger = logging.getLogger(AppConfig.APP_NAME)


def add_run_options(parser: argparse.ArgumentParser):
    """Options shared by every stage subcommand and 'pipeline'"""
    parser.add_argument('--config', type=Path, help="JSON pipeline config")
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='BLOCK.KEY=VALUE',
                        help="override a config value (JSON-parsed); repeatable")
    parser.add_argument('--input', dest='inputs', action='append', default=[], metavar='NAME=PATH',
                        help="input or artifact path, e.g. segmentation=seg.mrc; repeatable")
    parser.add_argument('--out', help="output directory")
    parser.add_argument('--seed', type=int, help="run seed")
    parser.add_argument('--threads', type=int, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=AppConfig.APP_NAME, description=AppConfig.APP_TITLE)
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--version', action='version', version=f"%(prog)s {AppConfig.VERSION}")
    commands = parser.add_subparsers(dest='command', required=True)

    for stage in AppConfig.STAGES:
        add_run_options(commands.add_parser(stage, help=f"run the {stage} stage alone"))
    add_run_options(commands.add_parser('pipeline', help="run the stages selected in the config"))

    phantom = commands.add_parser('phantom', help="write a synthetic phantom")
    phantom.add_argument('kind', choices=PHANTOMS)
    phantom.add_argument('--out', default='phantoms')
    phantom.add_argument('--size', type=int, default=64, help="grid edge in voxels")
    phantom.add_argument('--voxel-size', type=float, default=1.0, help="nm per voxel")
    phantom.add_argument('--separation', type=float, default=20.0, help="two-sheet mid-surface separation (nm)")
    phantom.add_argument('--radius', type=float, default=20.0, help="shell or cloud radius (nm)")
    phantom.add_argument('--seed', type=int, default=0)

    export = commands.add_parser('export', help="convert an artifact file to another format")
    export.add_argument('source', type=Path)
    export.add_argument('target', type=Path)
    export.add_argument('--format', help="target format (default: target suffix)")
    export.add_argument('--field', action='store_true', help="read a volume as a real-valued field")
    export.add_argument('--channel', help="vertex channel colouring an html rendering")
    return parser


def build_manager(args: argparse.Namespace) -> DataManager:
    """Config file, then --set overrides, then --input paths and top-level flags"""
    manager = DataManager.from_file(args.config) if args.config else DataManager()
    manager.apply_overrides(args.overrides)
    for entry in args.inputs:
        name, sep, path = entry.partition('=')
        if not sep or not name or not path:
            raise ConfigError(f"--input '{entry}' is not of the form NAME=PATH")
        manager.inputs[name] = path
    if args.command != 'pipeline':
        manager.update(stages=[args.command])
    manager.update(output_dir=args.out, rng_seed=args.seed, threads=args.threads)
    return manager


def command_run(args: argparse.Namespace) -> int:
    try:
        manager = build_manager(args)
        report = run_pipeline(manager)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return AppConfig.EXIT_CONFIG_ERROR
    if not report.ok:
        logger.error("run failed at stage '%s'; report in %s",
                     report.failed_stage, manager.artifact_path('run_report'))
        return AppConfig.EXIT_STAGE_FAILURE
    logger.info("run finished; report in %s", manager.artifact_path('run_report'))
    return AppConfig.EXIT_OK


def command_phantom(args: argparse.Namespace) -> int:
    written = write_phantom(args.kind, args.out, args.size, args.voxel_size,
                            args.separation, args.radius, args.seed)
    for role, path in written.items():
        print(f"{role}: {path}")
    return AppConfig.EXIT_OK


def read_artifact(path: Path, as_field: bool = False):
    suffix = path.suffix.lower()
    if suffix in ('.mrc', '.raw'):
        return volume_io.read_field(path) if as_field else volume_io.read_volume(path)
    if suffix == '.ply':
        return surface_io.read_ply(path)
    if suffix == '.obj':
        return surface_io.read_obj(path)
    if suffix == '.xyz':
        return surface_io.read_xyz(path)
    if suffix == '.json':
        with open(path, 'r', encoding='utf-8') as handle:
            return json.load(handle)
    raise ConfigError(f"cannot read artifact type '{suffix}'")


def command_export(args: argparse.Namespace) -> int:
    fmt = args.format or args.target.suffix.lstrip('.')
    try:
        artifact = read_artifact(args.source, args.field)
        exporter.export(artifact, fmt, args.target, args.channel)
    except ConfigError as exc:
        logger.error("%s", exc)
        return AppConfig.EXIT_CONFIG_ERROR
    except SurfaceError as exc:
        logger.error("export failed: %s", exc)
        return AppConfig.EXIT_STAGE_FAILURE
    return AppConfig.EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main application function"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s")
    if args.command == 'phantom':
        return command_phantom(args)
    if args.command == 'export':
        return command_export(args)
    return command_run(args)


if __name__ == "__main__":
    sys.exit(main())
