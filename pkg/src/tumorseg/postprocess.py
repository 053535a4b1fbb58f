"""Connected-component cleanup of predicted label volumes.

Two rules: drop whole-tumor components smaller than 1000 voxels, and
convert an enhancing-tumor structure totalling fewer than 300 voxels to
necrosis. Component analysis runs on the whole-tumor mask (any nonzero
label) under 26-connectivity by default.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import LABEL_ENHANCING, LABEL_NECROSIS, LabelVolume, VolumeError

MIN_TUMOR_VOXELS = 1000
ENHANCING_THRESHOLD = 300


@dataclass(frozen=True)
class Component:
    """One maximal connected set of foreground voxels.

    indices are flat positions into the row-major grid, in scan order; the
    list order across components follows each component's first voxel.
    """

    indices: np.ndarray
    size: int


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise VolumeError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components(mask: np.ndarray, connectivity: int = 26) -> list:
    """Partition a binary mask into maximal connected components.

    scipy's labeling assigns ids in scan order of each component's first
    voxel, which fixes the output ordering deterministically.
    """
    mask = np.asarray(mask, dtype=bool)
    labeled, n = ndimage.label(mask, structure=_structure(connectivity))
    flat = labeled.ravel()
    order = np.argsort(flat, kind="stable")
    start = np.searchsorted(flat[order], np.arange(1, n + 1))
    bounds = np.append(start, flat.size)
    return [Component(np.sort(order[bounds[i]:bounds[i + 1]]),
                      int(bounds[i + 1] - bounds[i]))
            for i in range(n)]


def remove_small_tumors(labels: LabelVolume,
                        min_voxels: int = MIN_TUMOR_VOXELS,
                        connectivity: int = 26) -> LabelVolume:
    """Zero out whole-tumor components with fewer than min_voxels voxels."""
    wt = labels.data != 0
    if not wt.any():
        return labels
    labeled, n = ndimage.label(wt, structure=_structure(connectivity))
    sizes = np.bincount(labeled.ravel(), minlength=n + 1)
    small = np.flatnonzero(sizes < min_voxels)
    small = small[small > 0]
    if small.size == 0:
        return labels
    out = labels.data.copy()
    out[np.isin(labeled, small)] = 0
    return labels.with_data(out)


def convert_small_enhancing(labels: LabelVolume,
                            threshold: int = ENHANCING_THRESHOLD) -> LabelVolume:
    """Relabel the whole enhancing structure to necrosis when it is tiny.

    The count is the total number of enhancing voxels, not per component;
    zero enhancing voxels and counts >= threshold are left unchanged.
    """
    et = labels.data == LABEL_ENHANCING
    n_et = int(et.sum())
    if 0 < n_et < threshold:
        out = labels.data.copy()
        out[et] = LABEL_NECROSIS
        return labels.with_data(out)
    return labels


def postprocess_pipeline(labels: LabelVolume,
                         min_voxels: int = MIN_TUMOR_VOXELS,
                         threshold: int = ENHANCING_THRESHOLD,
                         connectivity: int = 26) -> LabelVolume:
    """remove_small_tumors then convert_small_enhancing."""
    cleaned = remove_small_tumors(labels, min_voxels, connectivity)
    return convert_small_enhancing(cleaned, threshold)
