"""
SurfMorph Test Fixtures
Shared phantoms and parameter sets
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add modules to path
sys.path.append(str(Path(__file__).parent.parent))

from modules import phantoms
from modules.structures import VoxelGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cube_grid():
    """Factory for binary grids from boolean arrays"""
    def make(mask, voxel_size=1.0):
        return VoxelGrid(np.asarray(mask).astype(np.int32), np.full(3, voxel_size))
    return make


@pytest.fixture(scope='session')
def unit_sphere_mesh():
    return phantoms.icosphere(4, 1.0)


@pytest.fixture(scope='session')
def sphere_mesh_20():
    return phantoms.icosphere(4, 20.0)


@pytest.fixture(scope='session')
def two_sheet_phantom():
    return phantoms.two_sheet_mask(separation_nm=12.0, thickness_nm=3.0, size=32)
