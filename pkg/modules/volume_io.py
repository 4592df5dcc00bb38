"""
SurfMorph Volume I/O
MRC2014 and raw little-endian + sidecar codecs for voxel grids and scalar fields
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from modules.errors import VolumeFormatError
from modules.structures import ScalarField, VoxelGrid

logger = logging.getLogger(__name__)

ANGSTROM_PER_NM = 10.0
HEADER_BYTES = 1024

MRC_MODES = {
    0: np.dtype('i1'),
    1: np.dtype('<i2'),
    2: np.dtype('<f4'),
    6: np.dtype('<u2'),
}

MRC_HEADER = np.dtype([
    ('nx', '<i4'), ('ny', '<i4'), ('nz', '<i4'),
    ('mode', '<i4'),
    ('nxstart', '<i4'), ('nystart', '<i4'), ('nzstart', '<i4'),
    ('mx', '<i4'), ('my', '<i4'), ('mz', '<i4'),
    ('cella', '<f4', 3),
    ('cellb', '<f4', 3),
    ('mapc', '<i4'), ('mapr', '<i4'), ('maps', '<i4'),
    ('dmin', '<f4'), ('dmax', '<f4'), ('dmean', '<f4'),
    ('ispg', '<i4'),
    ('nsymbt', '<i4'),
    ('extra', 'V100'),
    ('origin', '<f4', 3),
    ('map', 'S4'),
    ('machst', 'u1', 4),
    ('rms', '<f4'),
    ('nlabl', '<i4'),
    ('label', 'S80', 10),
])

RAW_DTYPES = {
    'u8': np.dtype('u1'),
    'u16': np.dtype('<u2'),
    'f32': np.dtype('<f4'),
}

SIDECAR_SUFFIX = '.hdr'


# ---------------------------------------------------------------- MRC2014

def _check_mrc_layout(path: Path, header: np.void):
    """Only little-endian files with the standard column/row/section axes are read"""
    stamp = int(header['machst'][0])
    if stamp not in (0x00, 0x44):
        raise VolumeFormatError(f"{path}: byte order stamp 0x{stamp:02x} is not little-endian")
    axes = (int(header['mapc']), int(header['mapr']), int(header['maps']))
    if axes != (1, 2, 3):
        raise VolumeFormatError(f"{path}: axis mapping {axes} is not (1, 2, 3)")


def _read_mrc(path: Path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (data indexed [x, y, z], voxel size nm, origin nm)"""
    raw = path.read_bytes()
    if len(raw) < HEADER_BYTES:
        raise VolumeFormatError(f"{path}: file shorter than the MRC header")
    header = np.frombuffer(raw[:HEADER_BYTES], dtype=MRC_HEADER)[0]
    _check_mrc_layout(path, header)
    mode = int(header['mode'])
    if mode not in MRC_MODES:
        raise VolumeFormatError(f"{path}: unsupported MRC mode {mode}")
    dims = (int(header['nx']), int(header['ny']), int(header['nz']))
    if min(dims) < 1:
        raise VolumeFormatError(f"{path}: invalid dims {dims}")
    dtype = MRC_MODES[mode]
    offset = HEADER_BYTES + int(header['nsymbt'])
    count = dims[0] * dims[1] * dims[2]
    expected = offset + count * dtype.itemsize
    if len(raw) < expected:
        raise VolumeFormatError(f"{path}: dims/data size mismatch ({len(raw)} < {expected} bytes)")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    # X fastest on disk
    data = flat.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0).copy()
    sampling = np.array([header['mx'], header['my'], header['mz']], dtype=np.float64)
    sampling = np.where(sampling > 0, sampling, np.asarray(dims, dtype=np.float64))
    cella = np.asarray(header['cella'], dtype=np.float64)
    if np.any(cella <= 0):
        raise VolumeFormatError(f"{path}: non-positive voxel size")
    voxel_size = cella / sampling / ANGSTROM_PER_NM
    origin = np.asarray(header['origin'], dtype=np.float64) / ANGSTROM_PER_NM
    return data, voxel_size, origin


def _write_mrc(path: Path, data: np.ndarray, mode: int, voxel_size: np.ndarray, origin: np.ndarray):
    dtype = MRC_MODES[mode]
    values = np.asarray(data).astype(dtype)
    nx, ny, nz = values.shape
    header = np.zeros(1, dtype=MRC_HEADER)
    header['nx'], header['ny'], header['nz'] = nx, ny, nz
    header['mode'] = mode
    header['mx'], header['my'], header['mz'] = nx, ny, nz
    header['cella'] = np.asarray(voxel_size) * np.array([nx, ny, nz]) * ANGSTROM_PER_NM
    header['cellb'] = (90.0, 90.0, 90.0)
    header['mapc'], header['mapr'], header['maps'] = 1, 2, 3
    header['dmin'] = float(values.min())
    header['dmax'] = float(values.max())
    header['dmean'] = float(values.mean())
    header['rms'] = float(values.std())
    header['ispg'] = 1
    header['origin'] = np.asarray(origin) * ANGSTROM_PER_NM
    header['map'] = b'MAP '
    header['machst'] = (0x44, 0x44, 0x00, 0x00)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(values.transpose(2, 1, 0)).tobytes())


# ---------------------------------------------------------------- raw + sidecar

def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + SIDECAR_SUFFIX)


def _parse_triplet(text: str, key: str) -> np.ndarray:
    parts = [p for p in text.replace(' ', '').split(',') if p]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise VolumeFormatError(f"sidecar key '{key}' needs 3 values")
    return np.array([float(p) for p in parts])


def _read_sidecar(path: Path) -> Dict[str, str]:
    side = sidecar_path(path)
    if not side.exists():
        raise VolumeFormatError(f"{path}: missing sidecar header {side.name}")
    entries = {}
    for line in side.read_text(encoding='utf-8').splitlines():
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, _, value = line.partition('=')
        entries[key.strip()] = value.strip()
    for key in ('dims', 'dtype', 'voxel_size_nm'):
        if key not in entries:
            raise VolumeFormatError(f"{side.name}: missing key '{key}'")
    return entries


def _read_raw(path: Path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    entries = _read_sidecar(path)
    dims = tuple(int(v) for v in _parse_triplet(entries['dims'], 'dims'))
    if entries['dtype'] not in RAW_DTYPES:
        raise VolumeFormatError(f"{path}: unsupported raw dtype '{entries['dtype']}'")
    dtype = RAW_DTYPES[entries['dtype']]
    voxel_size = _parse_triplet(entries['voxel_size_nm'], 'voxel_size_nm')
    if np.any(voxel_size <= 0):
        raise VolumeFormatError(f"{path}: non-positive voxel size")
    origin = _parse_triplet(entries.get('origin_nm', '0,0,0'), 'origin_nm')
    raw = path.read_bytes()
    count = dims[0] * dims[1] * dims[2]
    if len(raw) != count * dtype.itemsize:
        raise VolumeFormatError(f"{path}: dims/sidecar mismatch ({len(raw)} bytes for dims {dims})")
    data = np.frombuffer(raw, dtype=dtype).reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0).copy()
    return data, voxel_size, origin


def _write_raw(path: Path, data: np.ndarray, dtype_key: str, voxel_size: np.ndarray, origin: np.ndarray):
    values = np.asarray(data).astype(RAW_DTYPES[dtype_key])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(values.transpose(2, 1, 0)).tobytes())
    fmt = lambda arr: ','.join(repr(float(v)) for v in arr)
    lines = [
        f"dims={','.join(str(n) for n in values.shape)}",
        f"dtype={dtype_key}",
        f"voxel_size_nm={fmt(voxel_size)}",
        f"origin_nm={fmt(origin)}",
    ]
    sidecar_path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def _is_raw(path: Path) -> bool:
    return path.suffix.lower() == '.raw'


def _read_any(path: Path):
    if not path.exists():
        raise VolumeFormatError(f"{path}: file does not exist")
    if _is_raw(path):
        return _read_raw(path)
    return _read_mrc(path)


# ---------------------------------------------------------------- public API

def _labels_from_values(values: np.ndarray, path: Path) -> np.ndarray:
    if np.issubdtype(values.dtype, np.integer):
        if values.min() < 0:
            raise VolumeFormatError(f"{path}: negative labels")
        return values.astype(np.int32)
    integral = np.all(np.equal(np.mod(values, 1), 0)) and values.min() >= 0
    if integral:
        return values.astype(np.int32)
    logger.warning("%s: non-integral values, thresholding at 0.5", path)
    return (values > 0.5).astype(np.int32)


def read_volume(path: Union[str, Path]) -> VoxelGrid:
    """Read a label grid from MRC2014 or raw + sidecar"""
    path = Path(path)
    data, voxel_size, origin = _read_any(path)
    return VoxelGrid(_labels_from_values(data, path), voxel_size, origin)


def write_volume(path: Union[str, Path], grid: VoxelGrid):
    """Write a label grid; MRC uses mode 0 when labels fit in int8, otherwise mode 6"""
    path = Path(path)
    max_label = int(grid.data.max()) if grid.data.size else 0
    if max_label > np.iinfo(np.uint16).max:
        raise VolumeFormatError(f"{path}: label {max_label} does not fit MRC mode 6")
    if _is_raw(path):
        dtype_key = 'u8' if max_label <= np.iinfo(np.uint8).max else 'u16'
        _write_raw(path, grid.data, dtype_key, grid.voxel_size, grid.origin)
    else:
        mode = 0 if max_label <= np.iinfo(np.int8).max else 6
        _write_mrc(path, grid.data, mode, grid.voxel_size, grid.origin)


def volume_io(path: Union[str, Path], mode: str = 'read', grid: Optional[VoxelGrid] = None) -> Optional[VoxelGrid]:
    """Read or write a VoxelGrid depending on mode"""
    if mode == 'read':
        return read_volume(path)
    if mode == 'write':
        if grid is None:
            raise VolumeFormatError("write mode needs a grid")
        write_volume(path, grid)
        return None
    raise VolumeFormatError(f"unknown mode '{mode}'")


def read_field(path: Union[str, Path]) -> ScalarField:
    """Read a scalar field from MRC mode 2 or raw f32 + sidecar"""
    data, spacing, origin = _read_any(Path(path))
    return ScalarField(data.astype(np.float64), spacing, origin)


def write_field(path: Union[str, Path], field: ScalarField):
    """Write a scalar field as float32"""
    path = Path(path)
    if _is_raw(path):
        _write_raw(path, field.values, 'f32', field.spacing, field.origin)
    else:
        _write_mrc(path, field.values, 2, field.spacing, field.origin)


def read_voxel_size(path: Union[str, Path]) -> float:
    """Smallest voxel edge (nm) of a volume file, header only"""
    path = Path(path)
    if _is_raw(path):
        entries = _read_sidecar(path)
        return float(_parse_triplet(entries['voxel_size_nm'], 'voxel_size_nm').min())
    with open(path, 'rb') as handle:
        header = np.frombuffer(handle.read(HEADER_BYTES), dtype=MRC_HEADER)[0]
    _check_mrc_layout(path, header)
    sampling = np.array([header['mx'], header['my'], header['mz']], dtype=np.float64)
    dims = np.array([header['nx'], header['ny'], header['nz']], dtype=np.float64)
    sampling = np.where(sampling > 0, sampling, dims)
    return float((np.asarray(header['cella'], dtype=np.float64) / sampling / ANGSTROM_PER_NM).min())
