"""
Tests for the MRC and raw volume codecs
"""

import numpy as np
import pytest

from modules.errors import VolumeFormatError
from modules.structures import ScalarField, VoxelGrid
from modules.volume_io import (MRC_HEADER, read_field, read_volume, read_voxel_size, sidecar_path, volume_io,
                               write_field, write_volume)


def test_mrc_round_trip_keeps_labels_and_converts_angstrom(tmp_path, rng):
    data = (rng.random((4, 4, 4)) < 0.5).astype(np.int32)
    path = tmp_path / 'mask.mrc'
    volume_io(path, 'write', VoxelGrid(data, np.full(3, 0.155)))
    grid = volume_io(path, 'read')
    np.testing.assert_array_equal(grid.data, data)
    np.testing.assert_allclose(grid.voxel_size, 0.155, rtol=1e-6)


def test_axis_order_is_preserved(tmp_path):
    data = np.arange(2 * 3 * 4, dtype=np.int32).reshape(2, 3, 4)
    path = tmp_path / 'ordered.mrc'
    write_volume(path, VoxelGrid(data))
    np.testing.assert_array_equal(read_volume(path).data, data)
    raw = path.read_bytes()
    header = np.frombuffer(raw[:1024], dtype=MRC_HEADER)[0]
    assert (int(header['nx']), int(header['ny']), int(header['nz'])) == (2, 3, 4)


def test_header_pixel_size_in_angstrom(tmp_path):
    path = tmp_path / 'binned.mrc'
    write_volume(path, VoxelGrid(np.ones((3, 3, 3), dtype=np.int32), np.full(3, 1.7)))
    assert read_voxel_size(path) == pytest.approx(1.7, rel=1e-6)


def test_unsupported_mode_is_rejected(tmp_path):
    path = tmp_path / 'complex.mrc'
    write_volume(path, VoxelGrid(np.ones((2, 2, 2), dtype=np.int32)))
    raw = bytearray(path.read_bytes())
    raw[12:16] = np.int32(3).tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(VolumeFormatError, match="unsupported MRC mode"):
        read_volume(path)


def test_big_endian_stamp_is_rejected(tmp_path):
    path = tmp_path / 'swapped.mrc'
    write_volume(path, VoxelGrid(np.ones((2, 2, 2), dtype=np.int32)))
    raw = bytearray(path.read_bytes())
    raw[212:216] = bytes([0x11, 0x11, 0x00, 0x00])
    path.write_bytes(bytes(raw))
    with pytest.raises(VolumeFormatError, match="not little-endian"):
        read_volume(path)
    with pytest.raises(VolumeFormatError, match="not little-endian"):
        read_voxel_size(path)


def test_permuted_axes_are_rejected(tmp_path):
    path = tmp_path / 'permuted.mrc'
    write_volume(path, VoxelGrid(np.ones((2, 3, 4), dtype=np.int32)))
    raw = bytearray(path.read_bytes())
    raw[64:76] = np.array([3, 2, 1], dtype='<i4').tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(VolumeFormatError, match=r"axis mapping \(3, 2, 1\)"):
        read_volume(path)


def test_raw_sidecar_round_trip(tmp_path):
    data = np.zeros((5, 4, 3), dtype=np.int32)
    data[1:3, 1:3, 1] = 2
    path = tmp_path / 'labels.raw'
    write_volume(path, VoxelGrid(data, np.array([1.0, 1.0, 2.0]), np.array([0.5, -1.0, 3.0])))
    assert sidecar_path(path).exists()
    grid = read_volume(path)
    np.testing.assert_array_equal(grid.data, data)
    np.testing.assert_allclose(grid.voxel_size, [1.0, 1.0, 2.0])
    np.testing.assert_allclose(grid.origin, [0.5, -1.0, 3.0])


def test_raw_size_mismatch(tmp_path):
    path = tmp_path / 'short.raw'
    write_volume(path, VoxelGrid(np.ones((4, 4, 4), dtype=np.int32)))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(VolumeFormatError, match="mismatch"):
        read_volume(path)


def test_missing_sidecar(tmp_path):
    path = tmp_path / 'lonely.raw'
    path.write_bytes(bytes(8))
    with pytest.raises(VolumeFormatError, match="sidecar"):
        read_volume(path)


def test_non_positive_voxel_size_rejected():
    with pytest.raises(VolumeFormatError, match="non-positive voxel size"):
        VoxelGrid(np.ones((2, 2, 2), dtype=np.int32), np.array([1.0, 0.0, 1.0]))


@pytest.mark.parametrize('suffix', ['.mrc', '.raw'])
def test_field_round_trip_in_float32(tmp_path, rng, suffix):
    values = rng.normal(size=(4, 5, 6))
    path = tmp_path / f'field{suffix}'
    write_field(path, ScalarField(values, np.full(3, 0.5)))
    field = read_field(path)
    np.testing.assert_allclose(field.values, values.astype(np.float32))
    np.testing.assert_allclose(field.spacing, 0.5)
