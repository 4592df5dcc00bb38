"""
SurfMorph Pipeline
Stage graph from segmentation masks to distance and curvature reports, with a run report
"""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from config.app_config import AppConfig
from modules import exporter, surface_io, volume_io
from modules.data_manager import DataManager, sha256_file
from modules.errors import ConfigError, SurfaceError, StageError
from modules.fields import extract_isosurface_cloud
from modules.medial import extract_medial_surface, medial_summary
from modules.meshing import ball_pivot, damped_laplacian_smooth, gap_filter, mesh_cleanup, poisson_reconstruct
from modules.metrics import curvature_monge, point_to_mesh_distance, surface_area
from modules.normals import orient_cloud
from modules.partition import split_isosurface
from modules.structures import TriangleMesh, VoxelGrid
from modules.volume import binarize, connected_components, postprocess_rois, roi_summary

logger = logging.getLogger(__name__)

PACKAGE_LOGGER = 'modules'

# artifacts each stage writes, in write order
STAGE_OUTPUTS = {
    'roi-post': ['segmentation_roi', 'rois_labelled', 'roi_summary'],
    'medial': ['medial'],
    'iso': ['sdf', 'isosurface_mesh', 'iso_cloud'],
    'orient': ['medial_oriented'],
    'mesh': ['medial_mesh'],
    'proxy': ['proxy'],
    'split': ['leaflet_inner', 'leaflet_outer', 'split_summary'],
    'distance': ['distance_table', 'distance_summary'],
    'curvature': ['curvature_table', 'curvature_summary', 'curvature_mesh'],
}


class WarningCollector(logging.Handler):
    """Keeps the text of every warning emitted while a run is active"""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord):
        self.messages.append(f"{record.name}: {record.getMessage()}")


@dataclass
class StageRecord:
    """Outcome of one stage"""

    name: str
    status: str = 'pending'
    seconds: float = 0.0
    outputs: Dict[str, str] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class RunReport:
    """Machine-readable record of a pipeline run; written even when a stage fails"""

    version: str = AppConfig.VERSION
    schema_version: int = AppConfig.SCHEMA_VERSION
    stages: List[StageRecord] = field(default_factory=list)
    inputs: Dict[str, str] = field(default_factory=dict)
    parameters: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': self.version,
            'schema_version': self.schema_version,
            'ok': self.ok,
            'failed_stage': self.failed_stage,
            'error': self.error,
            'inputs': dict(self.inputs),
            'parameters': self.parameters,
            'config': self.config,
            'warnings': list(self.warnings),
            'stages': [vars(stage) for stage in self.stages],
        }

    def write(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        exporter.write_json(path, self.to_dict())
        return path


# ---------------------------------------------------------------- helpers

def _mesh_summary(mesh: TriangleMesh) -> Dict[str, Any]:
    n_components, _ = mesh.face_components()
    return {
        'vertices': int(mesh.n_vertices),
        'faces': int(mesh.n_faces),
        'components': int(n_components),
        'euler_characteristic': int(mesh.euler_characteristic()),
        'boundary_vertices': int(mesh.boundary_vertices().sum()),
        'area_nm2': surface_area(mesh),
    }


def _support_mask(manager: DataManager) -> VoxelGrid:
    """ROI-restricted segmentation when available, else the raw segmentation"""
    if manager.has_source('segmentation_roi'):
        return volume_io.read_volume(manager.source('segmentation_roi'))
    segmentation = manager.inputs.get('segmentation')
    if not segmentation:
        raise SurfaceError("no segmentation: run roi-post or set inputs.segmentation")
    return volume_io.read_volume(segmentation)


def _segments(mask: VoxelGrid) -> VoxelGrid:
    """Connected pieces of the support, labelled 1..L"""
    return connected_components(binarize(mask), 26)


# ---------------------------------------------------------------- stages

def stage_roi_post(manager: DataManager) -> Dict[str, Any]:
    segmentation = volume_io.read_volume(manager.inputs['segmentation'])
    rois_path = manager.inputs.get('rois')
    rois = volume_io.read_volume(rois_path) if rois_path else None
    restricted, labelled = postprocess_rois(segmentation, rois, manager.params('roi'))
    volume_io.write_volume(manager.artifact_path('segmentation_roi'), restricted)
    volume_io.write_volume(manager.artifact_path('rois_labelled'), labelled)
    table = roi_summary(restricted)
    summary = {
        'rois': int(labelled.data.max()),
        'segmentation_voxels': int(restricted.foreground.sum()),
        'voxel_size_nm': [float(v) for v in restricted.voxel_size],
        'per_roi': table.to_dict(orient='records'),
    }
    exporter.write_json(manager.artifact_path('roi_summary'), summary)
    return {key: value for key, value in summary.items() if key != 'per_roi'}


def stage_medial(manager: DataManager) -> Dict[str, Any]:
    mask = _support_mask(manager)
    params = replace(manager.params('medial'), rng_seed=manager.rng_seed)
    cloud = extract_medial_surface(mask, params, manager.threads)
    segments = _segments(mask)
    cloud = replace(cloud, labels=segments.labels_at(cloud.points))
    surface_io.write_ply(manager.artifact_path('medial'), cloud)
    return {**medial_summary(cloud), 'segments': int(segments.data.max())}


def stage_iso(manager: DataManager) -> Dict[str, Any]:
    mask = _support_mask(manager)
    result = extract_isosurface_cloud(binarize(mask), manager.params('flow'), manager.params('iso'),
                                      manager.params('medial'), manager.rng_seed)
    volume_io.write_field(manager.artifact_path('sdf'), result.sdf)
    surface_io.write_ply(manager.artifact_path('isosurface_mesh'), result.mesh)
    surface_io.write_ply(manager.artifact_path('iso_cloud'), result.cloud)
    return {'points': len(result.cloud), **_mesh_summary(result.mesh)}


def stage_orient(manager: DataManager) -> Dict[str, Any]:
    cloud = surface_io.read_cloud(manager.source('medial'))
    oriented = orient_cloud(cloud, manager.params('orient'))
    surface_io.write_ply(manager.artifact_path('medial_oriented'), oriented)
    flagged = oriented.attributes.get('normal_flagged')
    return {
        'points': len(oriented),
        'flagged_normals': int(flagged.sum()) if flagged is not None else 0,
    }


def stage_mesh(manager: DataManager) -> Dict[str, Any]:
    cloud = surface_io.read_cloud(manager.source('medial_oriented'))
    params = manager.params('mesh')
    mesh = ball_pivot(cloud, params)
    try:
        support = _segments(_support_mask(manager))
    except SurfaceError:
        logger.warning("no support mask; gap filtering against the rasterised point cloud")
        support = cloud
    mesh = mesh_cleanup(gap_filter(mesh, support, params, manager.threads))
    if params.smooth_after:
        mesh = damped_laplacian_smooth(mesh, params)
    if cloud.labels is not None and not mesh.is_empty():
        source = mesh.channels['source_index'].astype(np.int64)
        mesh = mesh.with_channel('segment', cloud.labels[source].astype(float))
    surface_io.write_ply(manager.artifact_path('medial_mesh'), mesh)
    return _mesh_summary(mesh)


def stage_proxy(manager: DataManager) -> Dict[str, Any]:
    medial_mesh = surface_io.read_mesh(manager.source('medial_mesh'))
    if medial_mesh.vertex_normals is None:
        medial_mesh = medial_mesh.with_normals(medial_mesh.compute_vertex_normals())
    proxy = poisson_reconstruct(medial_mesh.as_point_cloud(), manager.params('mesh'))
    surface_io.write_ply(manager.artifact_path('proxy'), proxy)
    return _mesh_summary(proxy)


def stage_split(manager: DataManager) -> Dict[str, Any]:
    iso = surface_io.read_mesh(manager.source('isosurface_mesh'))
    proxy = surface_io.read_mesh(manager.source('proxy'))
    sdf = volume_io.read_field(manager.source('sdf')) if manager.has_source('sdf') else None
    pair = split_isosurface(iso, proxy, sdf)
    surface_io.write_ply(manager.artifact_path('leaflet_inner'), pair.inner)
    surface_io.write_ply(manager.artifact_path('leaflet_outer'), pair.outer)
    summary = {
        **pair.summary(),
        'inner_area_nm2': surface_area(pair.inner),
        'outer_area_nm2': surface_area(pair.outer),
    }
    exporter.write_json(manager.artifact_path('split_summary'), summary)
    return summary


def _labelled_piece(mesh: TriangleMesh, label: int) -> TriangleMesh:
    if 'segment' not in mesh.channels:
        raise SurfaceError("medial mesh carries no 'segment' channel; set distance.source and distance.target")
    member = np.rint(mesh.channels['segment']).astype(np.int64) == int(label)
    piece = mesh.submesh(member[mesh.faces].all(axis=1))
    if piece.is_empty():
        raise SurfaceError(f"medial mesh has no faces in segment {label}")
    return piece


def stage_distance(manager: DataManager) -> Dict[str, Any]:
    params = manager.params('distance')
    if params.source and params.target:
        source = surface_io.read_mesh(params.source)
        target = surface_io.read_mesh(params.target)
        names = (Path(params.source).stem, Path(params.target).stem)
    else:
        medial_mesh = surface_io.read_mesh(manager.source('medial_mesh'))
        source = _labelled_piece(medial_mesh, params.source_label)
        target = _labelled_piece(medial_mesh, params.target_label)
        names = (f"segment {params.source_label}", f"segment {params.target_label}")
    report = point_to_mesh_distance(source, target, names[0], names[1], manager.threads)
    exporter.export(report, 'csv', manager.artifact_path('distance_table'))
    exporter.export(report, 'json', manager.artifact_path('distance_summary'))
    return report.summary()


def stage_curvature(manager: DataManager) -> Dict[str, Any]:
    params = manager.params('curvature')
    mesh = surface_io.read_mesh(params.mesh if params.mesh else manager.source('medial_mesh'))
    if mesh.vertex_normals is None:
        mesh = mesh.with_normals(mesh.compute_vertex_normals())
    report = curvature_monge(mesh, params, manager.threads)
    exporter.export(report, 'csv', manager.artifact_path('curvature_table'))
    exporter.export(report, 'json', manager.artifact_path('curvature_summary'))
    surface_io.write_ply(manager.artifact_path('curvature_mesh'), report.apply_to(mesh))
    return report.summary()


STAGE_FUNCTIONS: Dict[str, Callable[[DataManager], Dict[str, Any]]] = {
    'roi-post': stage_roi_post,
    'medial': stage_medial,
    'iso': stage_iso,
    'orient': stage_orient,
    'mesh': stage_mesh,
    'proxy': stage_proxy,
    'split': stage_split,
    'distance': stage_distance,
    'curvature': stage_curvature,
}


# ---------------------------------------------------------------- driver

def _input_digests(manager: DataManager) -> Dict[str, str]:
    digests = {}
    for name, path in sorted(manager.inputs.items()):
        if path and Path(path).is_file():
            digests[name] = sha256_file(path)
    return digests


def run_stage(manager: DataManager, name: str, collector: WarningCollector,
              records: Optional[List[StageRecord]] = None) -> StageRecord:
    """Run one stage, recording timing, output digests and warnings; raises StageError on failure"""
    record = StageRecord(name)
    mark = len(collector.messages)
    start = time.perf_counter()
    logger.info("stage %s started", name)
    try:
        record.summary = STAGE_FUNCTIONS[name](manager)
        record.status = 'ok'
    except Exception as exc:
        record.status = 'failed'
        record.error = f"{type(exc).__name__}: {exc}"
        raise StageError(name, exc) from exc
    finally:
        record.seconds = round(time.perf_counter() - start, 3)
        record.warnings = collector.messages[mark:]
        for artifact in STAGE_OUTPUTS[name]:
            path = manager.artifact_path(artifact)
            if path.exists():
                record.outputs[path.name] = sha256_file(path)
        if records is not None:
            records.append(record)
    logger.info("stage %s finished in %.2f s", name, record.seconds)
    return record


def run_pipeline(manager: DataManager) -> RunReport:
    """Validate the whole configuration, then run the selected stages in dependency order.

    The run report is written to the output directory whatever happens. A config
    error is re-raised after the report is written; a stage failure is recorded in
    the report (failed_stage, error) and the artifacts of completed stages are kept.
    """
    report = RunReport(config=manager.config)
    collector = WarningCollector()
    package_logger = logging.getLogger(PACKAGE_LOGGER)
    previous_level = package_logger.level
    if package_logger.getEffectiveLevel() > logging.WARNING:
        package_logger.setLevel(logging.WARNING)
    package_logger.addHandler(collector)
    records: List[StageRecord] = []
    try:
        try:
            stages = manager.validate()
        except ConfigError as exc:
            report.error = f"ConfigError: {exc}"
            raise
        manager.output_dir.mkdir(parents=True, exist_ok=True)
        report.inputs = _input_digests(manager)
        report.parameters = manager.parameter_echo()
        logger.info("running stages %s into %s", ', '.join(stages), manager.output_dir)
        for name in stages:
            try:
                run_stage(manager, name, collector, records)
            except StageError as exc:
                report.failed_stage = exc.stage
                report.error = str(exc)
                logger.error("%s", exc)
                break
    finally:
        package_logger.removeHandler(collector)
        package_logger.setLevel(previous_level)
        report.stages = records
        report.warnings = list(collector.messages)
        report.write(manager.artifact_path('run_report'))
    return report
