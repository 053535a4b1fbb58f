"""Z-score normalization, patch sampling, and flip augmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import LabelVolume, ModalityStack, Volume, VolumeError


class PreprocessError(ValueError):
    pass


def zscore_normalize(vol: Volume) -> Volume:
    """Standardize brain voxels (value != 0) to zero mean, unit variance.

    Statistics use the population (divide-by-N) convention and are computed
    over nonzero voxels only; background stays exactly 0. Skull-stripped
    scans are mostly zeros, so whole-grid statistics would be meaningless.
    """
    data = vol.data
    brain = data != 0
    if not brain.any():
        raise PreprocessError("empty brain mask: volume is all zeros")
    values = data[brain].astype(np.float64)
    mean = values.mean()
    std = values.std()  # population
    if std == 0.0:
        raise PreprocessError("zero variance over brain voxels")
    out = np.zeros_like(data, dtype=np.float64)
    out[brain] = (values - mean) / std
    return Volume(vol.dims, vol.spacing, out)


@dataclass(frozen=True)
class Patch:
    """A 4-channel training cube cut from one case.

    data: (4, p, p, p) float32. origin: (z, y, x) offset of the cube in the
    source grid; the cube may extend past the source on axes shorter than p,
    in which case the overhang is zero-filled. label_cube: matching (p, p, p)
    uint8 labels, when sampled with ground truth.
    """

    data: np.ndarray
    origin: tuple
    label_cube: np.ndarray | None = None

    def __post_init__(self):
        p = self.data.shape[-1]
        if p < 4 or p % 2:
            raise PreprocessError(f"patch size must be even and >= 4, got {p}")
        if self.data.shape != (4, p, p, p):
            raise PreprocessError(f"bad patch shape {self.data.shape}")
        if self.label_cube is not None and self.label_cube.shape != (p, p, p):
            raise PreprocessError(f"bad label cube shape {self.label_cube.shape}")

    @property
    def size(self) -> int:
        return self.data.shape[-1]

    @property
    def center_label(self):
        if self.label_cube is None:
            return None
        c = self.size // 2
        return int(self.label_cube[c, c, c])


@dataclass(frozen=True)
class SamplingPolicy:
    """How many patches per case and how many must be tumor-centered."""

    tumor_fraction: float = 0.5
    patches_per_case: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tumor_fraction <= 1.0:
            raise PreprocessError(
                f"tumor_fraction must be in [0, 1], got {self.tumor_fraction}"
            )
        if self.patches_per_case < 1:
            raise PreprocessError("patches_per_case must be >= 1")


def _cut_cube(arr: np.ndarray, origin, p: int):
    """Slice a p-cube at origin, zero-padding where the grid is shorter."""
    out = np.zeros((p, p, p), dtype=arr.dtype)
    src = []
    dst = []
    for ax, o in enumerate(origin):
        n = arr.shape[ax]
        src.append(slice(o, min(o + p, n)))
        dst.append(slice(0, min(o + p, n) - o))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _clamped_origin(center, dims, p: int):
    """Origin that puts `center` at index p//2, clamped into the grid."""
    half = p // 2
    origin = []
    for c, n in zip(center, dims):
        if n <= p:
            origin.append(0)
        else:
            origin.append(int(np.clip(c - half, 0, n - p)))
    return tuple(origin)


def sample_patches(
    stack: ModalityStack,
    labels: LabelVolume,
    policy: SamplingPolicy,
    patch_size: int = 64,
) -> list:
    """Draw policy.patches_per_case patches, a seeded fraction tumor-centered.

    A patch is tumor-centered when its center voxel (origin + p//2) carries a
    nonzero label. Candidate centers near the volume edge are kept only if
    clamping the patch into the grid preserves the center's class; if no
    tumor voxel admits exact centering, the nearest clamped placement is
    used as a fallback.
    """
    if labels.dims != stack.dims:
        raise VolumeError("label geometry does not match modality stack")
    p = patch_size
    half = p // 2
    rng = np.random.default_rng(policy.seed)
    lab = labels.data
    dims = labels.dims

    n_tumor = int(round(policy.tumor_fraction * policy.patches_per_case))
    n_bg = policy.patches_per_case - n_tumor

    def centered_candidates(mask: np.ndarray) -> np.ndarray:
        coords = np.argwhere(mask)
        if coords.size == 0:
            return coords
        keep = np.ones(len(coords), dtype=bool)
        for ax in range(3):
            n = dims[ax]
            if n <= p:
                # placement is forced to origin 0; center index is half
                keep &= coords[:, ax] == half if half < n else False
            else:
                keep &= (coords[:, ax] >= half) & (coords[:, ax] <= n - p + half)
        return coords[keep]

    tumor_mask = lab != 0
    if n_tumor > 0 and not tumor_mask.any():
        raise PreprocessError(
            f"case {stack.case_id}: tumor_fraction > 0 but no tumor voxels"
        )

    tumor_pool = centered_candidates(tumor_mask)
    if n_tumor > 0 and len(tumor_pool) == 0:
        # tumor hugs the edge: best effort, clamped placement
        tumor_pool = np.argwhere(tumor_mask)
    bg_pool = centered_candidates(~tumor_mask)
    if n_bg > 0 and len(bg_pool) == 0:
        bg_pool = np.argwhere(~tumor_mask)
        if len(bg_pool) == 0:
            bg_pool = tumor_pool  # fully tumorous grid: degenerate but total

    channels = stack.as_array()
    patches = []
    for pool, count in ((tumor_pool, n_tumor), (bg_pool, n_bg)):
        for _ in range(count):
            center = pool[int(rng.integers(len(pool)))]
            origin = _clamped_origin(center, dims, p)
            cube = np.stack([_cut_cube(ch, origin, p) for ch in channels])
            label_cube = _cut_cube(lab, origin, p)
            patches.append(Patch(cube, origin, label_cube))
    return patches


def flip_lr(patch: Patch) -> Patch:
    """Mirror the patch along the width axis (anatomical left-right)."""
    data = np.ascontiguousarray(patch.data[..., ::-1])
    label_cube = None
    if patch.label_cube is not None:
        label_cube = np.ascontiguousarray(patch.label_cube[..., ::-1])
    return Patch(data, patch.origin, label_cube)
