"""
Tests for mesh and cloud codecs and artifact export
"""

import json

import numpy as np
import pandas as pd
import pytest

from modules import exporter, phantoms
from modules.errors import ExportError, GeometryError
from modules.metrics import point_to_mesh_distance
from modules.structures import PointCloud, ScalarField, VoxelGrid
from modules.surface_io import read_cloud, read_mesh, read_obj, read_ply, read_xyz, write_obj, write_ply, write_xyz


class TestPly:
    @pytest.mark.parametrize('binary', [True, False])
    def test_mesh_with_channels(self, tmp_path, binary):
        mesh = phantoms.icosphere(1, 3.0)
        mesh = mesh.with_channel('H', np.linspace(-1, 1, mesh.n_vertices))
        path = tmp_path / 'mesh.ply'
        write_ply(path, mesh, binary=binary)
        back = read_mesh(path)
        np.testing.assert_array_equal(back.faces, mesh.faces)
        np.testing.assert_allclose(back.vertices, mesh.vertices)
        np.testing.assert_allclose(back.vertex_normals, mesh.vertex_normals)
        np.testing.assert_allclose(back.channels['H'], mesh.channels['H'], atol=1e-7)

    def test_cloud_with_labels_and_attributes(self, tmp_path):
        cloud = PointCloud(np.arange(12, dtype=float).reshape(4, 3), labels=[0, 1, 1, 2],
                           attributes={'spacing_nm': [0.5, 1.0, 1.5, 2.0]})
        path = tmp_path / 'cloud.ply'
        write_ply(path, cloud)
        back = read_ply(path)
        assert isinstance(back, PointCloud)
        np.testing.assert_array_equal(back.labels, [0, 1, 1, 2])
        np.testing.assert_allclose(back.attributes['spacing_nm'], [0.5, 1.0, 1.5, 2.0])
        assert back.normals is None

    def test_reserved_channel_name_rejected(self, tmp_path):
        mesh = phantoms.icosphere(0, 1.0).with_channel('nx', np.zeros(12))
        with pytest.raises(ExportError, match="reserved"):
            write_ply(tmp_path / 'bad.ply', mesh)

    def test_cloud_file_is_not_a_mesh(self, tmp_path):
        path = tmp_path / 'cloud.ply'
        write_ply(path, phantoms.plane_cloud(n_side=3))
        with pytest.raises(GeometryError, match="point cloud"):
            read_mesh(path)
        assert len(read_cloud(path)) == 9


def test_obj_round_trip(tmp_path):
    mesh = phantoms.grid_mesh(n_side=4)
    path = tmp_path / 'grid.obj'
    write_obj(path, mesh)
    back = read_obj(path)
    np.testing.assert_array_equal(back.faces, mesh.faces)
    np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-8)


def test_obj_polygons_are_fan_triangulated(tmp_path):
    path = tmp_path / 'quad.obj'
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n")
    np.testing.assert_array_equal(read_obj(path).faces, [[0, 1, 2], [0, 2, 3]])


def test_xyz_with_normals(tmp_path):
    cloud = phantoms.sphere_cloud(n=20, radius=2.0)
    path = tmp_path / 'cloud.xyz'
    write_xyz(path, cloud)
    back = read_xyz(path)
    np.testing.assert_allclose(back.points, cloud.points, atol=1e-8)
    np.testing.assert_allclose(back.normals, cloud.normals, atol=1e-8)


class TestExport:
    def test_incompatible_pair_rejected(self, tmp_path):
        grid = VoxelGrid(np.ones((2, 2, 2), dtype=np.int32))
        with pytest.raises(ExportError, match="incompatible artifact/format"):
            exporter.export(grid, 'obj', tmp_path / 'grid.obj')

    def test_distance_report_formats(self, tmp_path, unit_sphere_mesh):
        report = point_to_mesh_distance(phantoms.sphere_cloud(n=50, radius=1.5), unit_sphere_mesh)
        exporter.export(report, 'csv', tmp_path / 'distance.csv')
        table = pd.read_csv(tmp_path / 'distance.csv')
        assert list(table.columns) == ['vertex_id', 'x', 'y', 'z', 'd']
        np.testing.assert_allclose(table['d'], report.distances)
        exporter.export(report, 'json', tmp_path / 'distance.json')
        summary = json.loads((tmp_path / 'distance.json').read_text())
        assert summary['count'] == 50
        exporter.export(report, 'xlsx', tmp_path / 'distance.xlsx')
        sheets = pd.read_excel(tmp_path / 'distance.xlsx', sheet_name=None)
        assert set(sheets) == {'vertices', 'summary'}

    def test_cloud_csv_columns(self, tmp_path):
        cloud = phantoms.plane_cloud(n_side=2).with_attribute('spacing_nm', np.ones(4))
        exporter.export(cloud, 'csv', tmp_path / 'cloud.csv')
        table = pd.read_csv(tmp_path / 'cloud.csv')
        assert list(table.columns) == ['point_id', 'x', 'y', 'z', 'nx', 'ny', 'nz', 'spacing_nm']

    def test_field_and_html(self, tmp_path):
        field = ScalarField(np.zeros((3, 3, 3)), np.ones(3))
        assert exporter.export(field, 'raw', tmp_path / 'field.raw').exists()
        mesh = phantoms.icosphere(1, 1.0).with_channel('H', np.ones(42))
        path = exporter.export(mesh, 'html', tmp_path / 'mesh.html', channel='H')
        assert 'plotly' in path.read_text().lower()
        with pytest.raises(ExportError, match="no channel"):
            exporter.export(mesh, 'html', tmp_path / 'other.html', channel='K')

    def test_json_handles_numpy_values(self, tmp_path):
        path = exporter.export({'count': np.int64(3), 'values': np.arange(2)}, 'json', tmp_path / 'summary.json')
        assert json.loads(path.read_text()) == {'count': 3, 'values': [0, 1]}
