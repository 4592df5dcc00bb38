"""
SurfMorph Volume Operations
Binary morphology, distance transforms and ROI mask post-processing
"""

import logging
from typing import NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage
from skimage.feature import peak_local_max
from skimage.segmentation import watershed

from modules.errors import GeometryError, GridMismatchError
from modules.structures import ScalarField, VoxelGrid

logger = logging.getLogger(__name__)

CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}


class OverlapScores(NamedTuple):
    dice: float
    iou: float
    empty: bool


def binarize(grid: VoxelGrid) -> VoxelGrid:
    """Collapse every non-zero label to 1"""
    return grid.with_data(grid.foreground.astype(np.int32))


def _linear_index(shape) -> np.ndarray:
    """X-fastest linear voxel index i + nx*(j + ny*k)"""
    nx, ny, nz = shape
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing='ij')
    return i + nx * (j + ny * k)


def relabel_sequential(labels: np.ndarray) -> np.ndarray:
    """Renumber labels to 1..L, ascending by minimum linear voxel index"""
    labels = np.asarray(labels)
    present = np.unique(labels[labels > 0])
    out = np.zeros(labels.shape, dtype=np.int32)
    if present.size == 0:
        return out
    first = ndimage.minimum(_linear_index(labels.shape), labels, present)
    order = present[np.argsort(first, kind='stable')]
    lookup = np.zeros(int(labels.max()) + 1, dtype=np.int32)
    lookup[order] = np.arange(1, order.size + 1, dtype=np.int32)
    return lookup[labels]


def _ball(radius_vox: int, voxel_size: np.ndarray) -> np.ndarray:
    """Voxels within (radius_vox + 1/2) voxel edges, in physical units; caps are flat, never single-voxel poles"""
    radius_nm = (radius_vox + 0.5) * float(voxel_size.min())
    half = np.floor(radius_nm / voxel_size + 1e-9).astype(int)
    axes = [np.arange(-h, h + 1) * s for h, s in zip(half, voxel_size)]
    x, y, z = np.meshgrid(*axes, indexing='ij')
    return (x ** 2 + y ** 2 + z ** 2) <= radius_nm ** 2 + 1e-9


def binary_open_close(mask: VoxelGrid, radius_vox: int) -> VoxelGrid:
    """Opening then closing with a ball structuring element"""
    radius_vox = int(radius_vox)
    if radius_vox < 1:
        raise GeometryError("radius_vox must be a positive integer")
    if radius_vox >= min(mask.dims) / 2.0:
        raise GeometryError(f"structuring element exceeds volume (radius {radius_vox}, dims {mask.dims})")
    element = _ball(radius_vox, mask.voxel_size)
    pad = max(element.shape) // 2 + 1
    data = np.pad(mask.foreground, pad, mode='edge')
    opened = ndimage.binary_opening(data, structure=element)
    closed = ndimage.binary_closing(opened, structure=element)
    crop = closed[pad:-pad, pad:-pad, pad:-pad]
    removed = int(mask.foreground.sum()) - int(crop.sum())
    logger.debug("open/close radius %d changed net foreground by %d voxels", radius_vox, -removed)
    return mask.with_data(crop.astype(np.int32))


def euclidean_distance_transform(mask: VoxelGrid) -> ScalarField:
    """Exact EDT (nm) to the nearest background voxel centre, volume padded by one background layer"""
    fg = mask.foreground
    if not fg.any():
        return ScalarField(np.zeros(mask.dims), mask.voxel_size, mask.origin)
    padded = np.pad(fg, 1, mode='constant', constant_values=False)
    dist = ndimage.distance_transform_edt(padded, sampling=mask.voxel_size)
    return ScalarField(dist[1:-1, 1:-1, 1:-1], mask.voxel_size, mask.origin)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity not in CONNECTIVITY_RANK:
        raise GeometryError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    return ndimage.generate_binary_structure(3, CONNECTIVITY_RANK[connectivity])


def connected_components(mask: VoxelGrid, connectivity: int = 26) -> VoxelGrid:
    """Label connected components 1..L in order of their first voxel"""
    labels, count = ndimage.label(mask.foreground, structure=_structure(connectivity))
    logger.debug("found %d components at connectivity %d", count, connectivity)
    return mask.with_data(relabel_sequential(labels))


def watershed_split(mask: VoxelGrid, min_seed_dist_nm: float = 10.0, connectivity: int = 26) -> VoxelGrid:
    """Split touching blobs by a seeded watershed on the negated EDT"""
    components = connected_components(mask, connectivity)
    n_components = int(components.data.max())
    if n_components == 0:
        logger.warning("watershed split: empty mask, returning component labelling")
        return components

    edt = euclidean_distance_transform(mask).values
    min_distance = max(1, int(round(min_seed_dist_nm / float(mask.voxel_size.min()))))
    peaks = peak_local_max(edt, min_distance=min_distance, labels=components.data, exclude_border=False)
    if len(peaks) == 0:
        logger.warning("watershed split: no seeds found, returning component labelling")
        return components

    markers = np.zeros(mask.dims, dtype=np.int32)
    # canonical seed order so marker ids do not depend on peak_local_max ordering
    flat = np.ravel_multi_index(tuple(peaks.T), mask.dims)
    peaks = peaks[np.argsort(flat)]
    markers[tuple(peaks.T)] = np.arange(1, len(peaks) + 1)

    seeded = np.unique(components.data[markers > 0])
    missing = np.setdiff1d(np.arange(1, n_components + 1), seeded)
    if missing.size:
        positions = ndimage.maximum_position(edt, components.data, missing)
        for offset, pos in enumerate(positions):
            markers[pos] = len(peaks) + offset + 1

    labels = watershed(-edt, markers, mask=mask.foreground, connectivity=CONNECTIVITY_RANK[connectivity])
    result = relabel_sequential(labels)
    logger.info("watershed split %d components into %d labels", n_components, int(result.max()))
    return mask.with_data(result)


def dice_iou(a: VoxelGrid, b: VoxelGrid) -> OverlapScores:
    """Dice and IoU overlap of two binary masks"""
    a.require_same_dims(b)
    fa, fb = a.foreground, b.foreground
    inter = int(np.logical_and(fa, fb).sum())
    union = int(np.logical_or(fa, fb).sum())
    total = int(fa.sum()) + int(fb.sum())
    if union == 0:
        logger.warning("dice/iou of two empty masks defined as 1.0")
        return OverlapScores(1.0, 1.0, True)
    return OverlapScores(2.0 * inter / total, inter / union, False)


def restrict_to_roi(segmentation: VoxelGrid, rois: VoxelGrid) -> VoxelGrid:
    """Keep segmentation voxels inside an ROI, labelled with that ROI's id"""
    try:
        segmentation.require_same_dims(rois)
    except GridMismatchError as exc:
        raise GridMismatchError(f"cannot restrict to ROI: {exc}")
    out = np.where(segmentation.foreground & (rois.data > 0), rois.data, 0)
    return rois.with_data(out.astype(np.int32))


def roi_summary(labels: VoxelGrid) -> pd.DataFrame:
    """Per-label voxel count, volume and centroid"""
    present = np.unique(labels.data[labels.data > 0])
    columns = ['label', 'voxels', 'volume_nm3', 'centroid_x', 'centroid_y', 'centroid_z']
    if present.size == 0:
        return pd.DataFrame(columns=columns)
    counts = ndimage.sum(np.ones(labels.dims), labels.data, present)
    centres = np.array(ndimage.center_of_mass(np.ones(labels.dims), labels.data, present))
    centres = labels.world_coordinates(centres)
    return pd.DataFrame({
        'label': present.astype(int),
        'voxels': np.asarray(counts, dtype=int),
        'volume_nm3': np.asarray(counts) * float(np.prod(labels.voxel_size)),
        'centroid_x': centres[:, 0],
        'centroid_y': centres[:, 1],
        'centroid_z': centres[:, 2],
    }, columns=columns)


def postprocess_rois(segmentation: VoxelGrid, rois: Optional[VoxelGrid], params) -> Tuple[VoxelGrid, VoxelGrid]:
    """Denoise masks, split ROI instances and restrict the segmentation to them.

    Returns (segmentation restricted to ROIs, labelled ROI mask).
    """
    seg = binarize(segmentation)
    radius = int(params.open_close_radius_vox)
    if radius > 0:
        seg = binary_open_close(seg, radius)
    if not seg.foreground.any():
        raise GeometryError("no foreground left in the segmentation after denoising")

    if rois is None:
        roi_mask = seg
    else:
        roi_mask = binarize(rois)
        if radius > 0:
            roi_mask = binary_open_close(roi_mask, radius)

    if params.watershed:
        labelled = watershed_split(roi_mask, params.min_seed_dist_nm, params.connectivity)
    else:
        labelled = connected_components(roi_mask, params.connectivity)
    restricted = restrict_to_roi(seg, labelled)
    logger.info("ROI post-processing kept %d of %d segmentation voxels in %d ROIs",
                int(restricted.foreground.sum()), int(seg.foreground.sum()), int(labelled.data.max()))
    return restricted, labelled
