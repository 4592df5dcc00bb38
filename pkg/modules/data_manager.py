"""
SurfMorph Data Manager
Handles pipeline configuration, parameter blocks, overrides and the artifact store
"""

import copy
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from config.app_config import AppConfig
from config.params import PARAMETER_CLASSES, ParamsBlock
from modules.errors import ConfigError, SurfaceError
from modules.parallel import THREADS_ENV, default_threads
from modules.volume_io import read_voxel_size

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = ('schema_version', 'inputs', 'stages', 'output_dir', 'rng_seed', 'threads')


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for block in iter(lambda: handle.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def parse_override(text: str):
    """'block.key=value' -> (block, key, value); value is JSON when it parses, else a string"""
    if '=' not in text:
        raise ConfigError(f"override '{text}' is not of the form block.key=value")
    target, raw = text.split('=', 1)
    parts = target.strip().split('.')
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if len(parts) == 1:
        return None, parts[0], value
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override '{text}' must name block.key")
    return parts[0], parts[1], value


class DataManager:
    """Manages the pipeline configuration and the files stages exchange"""

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        """Initialize from defaults, overlaid with a config dict"""
        self.config = self._defaults()
        if config:
            self._merge(config)
        self._params: Dict[str, ParamsBlock] = {}

    @staticmethod
    def _defaults() -> Dict[str, Any]:
        config = copy.deepcopy(AppConfig.DEFAULT_PIPELINE)
        for block, values in AppConfig.PARAMETER_BLOCKS.items():
            config[block] = copy.deepcopy(values)
        return config

    def _merge(self, data: Dict[str, Any]):
        version = data.get('schema_version', AppConfig.SCHEMA_VERSION)
        if version != AppConfig.SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version} (expected {AppConfig.SCHEMA_VERSION})")
        for key, value in data.items():
            if key in AppConfig.PARAMETER_BLOCKS:
                if not isinstance(value, dict):
                    raise ConfigError(f"block '{key}' must be an object")
                self.config[key].update(value)
            elif key in TOP_LEVEL_KEYS:
                self.config[key] = copy.deepcopy(value)
            else:
                raise ConfigError(f"unknown config key '{key}'")

    # ------------------------------------------------------------ loading

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "DataManager":
        """Load a JSON pipeline config"""
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                data = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        return cls(data)

    def apply_overrides(self, overrides: Sequence[str]):
        """Apply --set block.key=value overrides"""
        for text in overrides or []:
            block, key, value = parse_override(text)
            if block is None:
                if key not in TOP_LEVEL_KEYS:
                    raise ConfigError(f"unknown config key '{key}'")
                self.config[key] = value
            elif block == 'inputs':
                self.config['inputs'][key] = value
            elif block in AppConfig.PARAMETER_BLOCKS:
                self.config[block][key] = value
            else:
                raise ConfigError(f"unknown parameter block '{block}'")
        self._params.clear()

    def update(self, **top_level):
        """Override top-level keys (None values are ignored)"""
        for key, value in top_level.items():
            if value is None:
                continue
            if key not in TOP_LEVEL_KEYS:
                raise ConfigError(f"unknown config key '{key}'")
            self.config[key] = value
        self._params.clear()

    # ------------------------------------------------------------ accessors

    @property
    def output_dir(self) -> Path:
        return Path(self.config['output_dir'])

    @property
    def rng_seed(self) -> int:
        return int(self.config['rng_seed'])

    @property
    def threads(self) -> int:
        value = self.config.get('threads')
        return default_threads() if value is None else max(1, int(value))

    @property
    def inputs(self) -> Dict[str, str]:
        return self.config['inputs']

    def selected_stages(self) -> List[str]:
        stages = self.config['stages']
        if isinstance(stages, str):
            stages = [stages]
        unknown = [s for s in stages if s not in AppConfig.STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}")
        # dependency order, whatever order the config lists them in
        return [s for s in AppConfig.STAGES if s in stages]

    def voxel_size_nm(self) -> float:
        """Voxel edge used for 'vox' lengths: the input segmentation's, else 1 nm"""
        segmentation = self.inputs.get('segmentation')
        if segmentation and Path(segmentation).exists():
            return read_voxel_size(segmentation)
        produced = self.artifact_path('segmentation_roi')
        if produced.exists():
            return read_voxel_size(produced)
        return 1.0

    def params(self, block: str) -> ParamsBlock:
        """Validated parameter block (cached)"""
        if block not in self._params:
            if block not in PARAMETER_CLASSES:
                raise ConfigError(f"unknown parameter block '{block}'")
            self._params[block] = PARAMETER_CLASSES[block].from_dict(self.config[block], self.voxel_size_nm())
        return self._params[block]

    def validate(self) -> List[str]:
        """Validate every block a selected stage uses before anything runs"""
        stages = self.selected_stages()
        if not isinstance(self.config['rng_seed'], int) or self.config['rng_seed'] < 0:
            raise ConfigError("rng_seed must be a non-negative integer")
        threads = self.config.get('threads')
        if threads is not None and (not isinstance(threads, int) or threads < 1):
            raise ConfigError(f"threads must be a positive integer (or unset to use {THREADS_ENV})")
        for stage in stages:
            for block in AppConfig.STAGE_BLOCKS[stage]:
                self.params(block)
        if 'roi-post' in stages and not self.inputs.get('segmentation'):
            raise ConfigError("stage 'roi-post' needs inputs.segmentation")
        for name, path in self.inputs.items():
            if path and not Path(path).exists():
                raise ConfigError(f"input '{name}' not found: {path}")
        return stages

    # ------------------------------------------------------------ artifact store

    def artifact_path(self, name: str) -> Path:
        return self.output_dir / AppConfig.ARTIFACTS[name]

    def require_artifact(self, name: str) -> Path:
        path = self.artifact_path(name)
        if not path.exists():
            raise SurfaceError(f"missing artifact {path.name}; run the producing stage first")
        return path

    def source(self, name: str) -> Path:
        """Where a stage reads an artifact: an explicit input of that name, else the run's own copy"""
        explicit = self.inputs.get(name)
        if explicit:
            return Path(explicit)
        return self.require_artifact(name)

    def has_source(self, name: str) -> bool:
        return bool(self.inputs.get(name)) or self.artifact_path(name).exists()

    def digest(self, name: str) -> str:
        return sha256_file(self.artifact_path(name))

    def export_config(self) -> str:
        """Export the effective configuration as JSON"""
        return json.dumps(self.config, indent=2, sort_keys=True, default=str)

    def parameter_echo(self) -> Dict[str, Dict[str, Any]]:
        """Resolved (nm) parameters of every block validated so far"""
        return {name: block.to_dict() for name, block in sorted(self._params.items())}
