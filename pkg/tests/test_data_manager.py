"""
Tests for configuration loading, overrides, length units and validation
"""

import json

import numpy as np
import pytest

from config.app_config import AppConfig
from config.params import MedialParams, parse_length
from modules.data_manager import DataManager, parse_override
from modules.errors import ConfigError, SurfaceError
from modules.structures import VoxelGrid
from modules.volume_io import write_volume


@pytest.fixture
def segmentation_file(tmp_path):
    path = tmp_path / 'seg.mrc'
    data = np.zeros((6, 6, 6), dtype=np.int32)
    data[2:4] = 1
    write_volume(path, VoxelGrid(data, np.full(3, 0.5)))
    return path


class TestOverrides:
    @pytest.mark.parametrize('text,expected', [
        ('medial.k_neighbors=12', ('medial', 'k_neighbors', 12)),
        ('mesh.radii_nm=[1, 2.5]', ('mesh', 'radii_nm', [1, 2.5])),
        ('flow.dt=null', ('flow', 'dt', None)),
        ('distance.source=meshes/a.ply', ('distance', 'source', 'meshes/a.ply')),
        ('rng_seed=7', (None, 'rng_seed', 7)),
    ])
    def test_parse(self, text, expected):
        assert parse_override(text) == expected

    @pytest.mark.parametrize('text', ['medial.k_neighbors', 'a.b.c=1', '.key=1'])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_override(text)

    def test_apply_and_cache_invalidation(self):
        manager = DataManager()
        assert manager.params('medial').k_neighbors == 20
        manager.apply_overrides(['medial.k_neighbors=8', 'inputs.rois=r.mrc', 'threads=2'])
        assert manager.params('medial').k_neighbors == 8
        assert manager.inputs['rois'] == 'r.mrc'
        assert manager.threads == 2

    def test_unknown_block_or_key(self):
        manager = DataManager()
        with pytest.raises(ConfigError, match="unknown parameter block"):
            manager.apply_overrides(['bogus.key=1'])
        with pytest.raises(ConfigError, match="unknown config key"):
            manager.apply_overrides(['bogus=1'])


class TestLoading:
    def test_defaults(self):
        manager = DataManager()
        assert manager.selected_stages() == AppConfig.STAGES
        assert manager.rng_seed == 0
        assert manager.voxel_size_nm() == 1.0

    def test_from_file(self, tmp_path):
        path = tmp_path / 'run.json'
        path.write_text(json.dumps({'schema_version': 1, 'stages': ['curvature', 'mesh'],
                                    'mesh': {'gap_dist_nm': 3.0}}))
        manager = DataManager.from_file(path)
        assert manager.selected_stages() == ['mesh', 'curvature']
        assert manager.params('mesh').gap_dist_nm == 3.0
        assert manager.params('mesh').poisson_depth == 7

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown config key 'colour'"):
            DataManager({'colour': 'red'})

    def test_unknown_block_key(self):
        manager = DataManager({'medial': {'k_neighbours': 3}})
        with pytest.raises(ConfigError, match="unknown keys"):
            manager.params('medial')

    def test_schema_version_mismatch(self):
        with pytest.raises(ConfigError, match="schema_version"):
            DataManager({'schema_version': 99})

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{not json')
        with pytest.raises(ConfigError, match="cannot read config"):
            DataManager.from_file(path)

    def test_unknown_stage(self):
        with pytest.raises(ConfigError, match="unknown stages"):
            DataManager({'stages': ['medial', 'render']}).selected_stages()


class TestLengths:
    @pytest.mark.parametrize('value,voxel,expected', [
        (2.0, 0.5, 2.0), ('3vox', 0.5, 1.5), ('4 nm', 2.0, 4.0), ('1.25', 3.0, 1.25), (None, 1.0, None),
    ])
    def test_parse_length(self, value, voxel, expected):
        assert parse_length(value, voxel) == expected

    def test_bad_length(self):
        with pytest.raises(ConfigError, match="cannot parse length"):
            parse_length('two voxels')

    def test_vox_lengths_use_the_segmentation_voxel(self, segmentation_file):
        manager = DataManager({'inputs': {'segmentation': str(segmentation_file)}})
        assert manager.voxel_size_nm() == pytest.approx(0.5, rel=1e-6)
        params = manager.params('medial')
        assert isinstance(params, MedialParams)
        assert params.spacing_max_nm == pytest.approx(1.0, rel=1e-6)
        assert params.spacing_min_nm == pytest.approx(0.25, rel=1e-6)
        assert 'medial' in manager.parameter_echo()


class TestValidation:
    def test_roi_post_needs_segmentation(self):
        with pytest.raises(ConfigError, match="inputs.segmentation"):
            DataManager({'stages': ['roi-post']}).validate()

    def test_missing_input_file(self, tmp_path):
        manager = DataManager({'stages': ['orient'], 'inputs': {'medial': str(tmp_path / 'nope.ply')}})
        with pytest.raises(ConfigError, match="not found"):
            manager.validate()

    @pytest.mark.parametrize('config', [{'rng_seed': -1}, {'rng_seed': 1.5}, {'threads': 0}])
    def test_bad_top_level_values(self, config):
        with pytest.raises(ConfigError):
            DataManager({'stages': ['orient'], **config}).validate()

    def test_invalid_block_for_selected_stage(self):
        manager = DataManager({'stages': ['orient'], 'orient': {'tau': 1.5}})
        with pytest.raises(ConfigError, match="OrientParams"):
            manager.validate()

    def test_flow_dt_checked_against_the_voxel_at_load(self):
        with pytest.raises(ConfigError, match="stability bound"):
            DataManager({'stages': ['iso'], 'flow': {'dt': 1.0}}).validate()
        assert DataManager({'stages': ['iso'], 'flow': {'dt': 0.1}}).validate() == ['iso']

    def test_flow_dt_bound_follows_voxel_and_upsampling(self, segmentation_file):
        manager = DataManager({'stages': ['iso'], 'inputs': {'segmentation': str(segmentation_file)},
                               'flow': {'dt': 0.1}})
        with pytest.raises(ConfigError, match="stability bound"):
            manager.validate()
        with pytest.raises(ConfigError, match="stability bound"):
            DataManager({'stages': ['iso'], 'flow': {'dt': 0.1, 'upsample_factor': 2}}).validate()

    def test_blocks_of_unselected_stages_are_not_checked(self):
        manager = DataManager({'stages': ['orient'], 'mesh': {'gap_dist_nm': -1.0}})
        assert manager.validate() == ['orient']


class TestArtifacts:
    def test_explicit_input_wins(self, tmp_path):
        manager = DataManager({'output_dir': str(tmp_path / 'out'), 'inputs': {'medial': 'given.ply'}})
        assert str(manager.source('medial')) == 'given.ply'
        assert manager.has_source('medial')

    def test_missing_artifact(self, tmp_path):
        manager = DataManager({'output_dir': str(tmp_path)})
        assert not manager.has_source('medial_mesh')
        with pytest.raises(SurfaceError, match="missing artifact"):
            manager.source('medial_mesh')

    def test_update_ignores_none(self):
        manager = DataManager()
        manager.update(output_dir=None, rng_seed=4)
        assert manager.rng_seed == 4
        assert str(manager.output_dir) == AppConfig.DEFAULT_PIPELINE['output_dir']
