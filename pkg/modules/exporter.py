"""
SurfMorph Exporter
Writes artifacts (volumes, fields, clouds, meshes, reports) in the supported file formats
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from config.app_config import AppConfig
from modules import surface_io, volume_io
from modules.errors import ExportError
from modules.metrics import CurvatureReport, DistanceReport
from modules.structures import PointCloud, ScalarField, TriangleMesh, VoxelGrid

logger = logging.getLogger(__name__)


def artifact_kind(artifact: Any) -> str:
    for kind in (VoxelGrid, ScalarField, PointCloud, TriangleMesh, DistanceReport, CurvatureReport, dict):
        if isinstance(artifact, kind):
            return kind.__name__
    return type(artifact).__name__


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def write_json(path: Union[str, Path], data: Dict):
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(data, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write('\n')


def cloud_frame(cloud: PointCloud) -> pd.DataFrame:
    """Per-point table: position, normal, label and attribute columns"""
    table = {'point_id': np.arange(len(cloud)), 'x': cloud.points[:, 0],
             'y': cloud.points[:, 1], 'z': cloud.points[:, 2]}
    if cloud.normals is not None:
        table.update(nx=cloud.normals[:, 0], ny=cloud.normals[:, 1], nz=cloud.normals[:, 2])
    if cloud.labels is not None:
        table['label'] = cloud.labels
    for key in sorted(cloud.attributes):
        table[key] = cloud.attributes[key]
    return pd.DataFrame(table)


def mesh_figure(mesh: TriangleMesh, channel: Optional[str] = None, title: str = '') -> go.Figure:
    """Interactive mesh rendering, coloured by a vertex channel when given"""
    chart = AppConfig.CHART_CONFIG
    v, f = mesh.vertices, mesh.faces
    trace = dict(x=v[:, 0], y=v[:, 1], z=v[:, 2], i=f[:, 0], j=f[:, 1], k=f[:, 2], flatshading=False)
    if channel is not None:
        if channel not in mesh.channels:
            raise ExportError(f"mesh has no channel '{channel}'")
        trace.update(intensity=mesh.channels[channel], colorscale=chart['colorscale'],
                     colorbar=dict(title=channel))
    else:
        trace.update(color=chart['mesh_color'])
    fig = go.Figure(go.Mesh3d(**trace))
    fig.update_layout(
        title=title,
        paper_bgcolor=chart['background_color'],
        scene=dict(aspectmode='data', xaxis_title='x (nm)', yaxis_title='y (nm)', zaxis_title='z (nm)'),
        margin=dict(l=0, r=0, t=40, b=0),
    )
    return fig


def export(artifact: Any, fmt: str, path: Union[str, Path], channel: Optional[str] = None) -> Path:
    """Write an artifact in the given format; raises ExportError for incompatible pairs"""
    fmt = fmt.lower().lstrip('.')
    kind = artifact_kind(artifact)
    allowed = AppConfig.EXPORT_FORMATS.get(kind, [])
    if fmt not in allowed:
        raise ExportError(f"incompatible artifact/format: {kind} -> {fmt}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    if kind == 'VoxelGrid':
        volume_io.write_volume(path, artifact)
    elif kind == 'ScalarField':
        volume_io.write_field(path, artifact)
    elif kind == 'PointCloud':
        if fmt == 'ply':
            surface_io.write_ply(path, artifact)
        elif fmt == 'xyz':
            surface_io.write_xyz(path, artifact)
        else:
            cloud_frame(artifact).to_csv(path, index=False)
    elif kind == 'TriangleMesh':
        if fmt == 'ply':
            surface_io.write_ply(path, artifact)
        elif fmt == 'obj':
            surface_io.write_obj(path, artifact)
        else:
            mesh_figure(artifact, channel, path.stem).write_html(str(path), include_plotlyjs='cdn')
    elif kind in ('DistanceReport', 'CurvatureReport'):
        if fmt == 'csv':
            artifact.to_frame().to_csv(path, index=False)
        elif fmt == 'json':
            write_json(path, artifact.summary())
        else:
            with pd.ExcelWriter(path, engine='openpyxl') as writer:
                artifact.to_frame().to_excel(writer, sheet_name='vertices', index=False)
                summary = pd.json_normalize(artifact.summary(), sep='.').T.reset_index()
                summary.columns = ['statistic', 'value']
                summary['value'] = summary['value'].map(
                    lambda x: json.dumps(x, default=_json_default) if isinstance(x, (list, dict)) else x)
                summary.to_excel(writer, sheet_name='summary', index=False)
    else:
        write_json(path, artifact)
    logger.debug("exported %s to %s", kind, path)
    return path
