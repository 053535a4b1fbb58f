"""Survival feature extraction: 5 statistical + 10 necrosis shape features + age.

Shape definitions are pinned to deterministic voxel-based conventions:
axis lengths come from the population covariance of voxel-center physical
coordinates (axis = 4*sqrt(eigenvalue)), surface area counts exposed voxel
faces, sphericity compares the volume-equivalent sphere's area to that
face-count area, and diameters are maxima of pairwise boundary voxel-center
distances (in-plane for the 2D variants). A case with no necrosis zeroes
every feature except age.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .metrics import boundary_voxels
from .volume import LABEL_EDEMA, LABEL_ENHANCING, LABEL_NECROSIS, LabelVolume


class FeatureError(ValueError):
    pass


FEATURE_NAMES = (
    "amount_edema",
    "amount_necrosis",
    "amount_enhancing",
    "extent_of_tumor",
    "proportion_of_tumor",
    "elongation",
    "flatness",
    "minor_axis_length",
    "major_axis_length",
    "max_2d_diameter_row",
    "max_2d_diameter_column",
    "max_2d_diameter_slice",
    "max_3d_diameter",
    "sphericity",
    "surface_area",
    "age",
)


@dataclass(frozen=True)
class FeatureVector:
    case_id: str
    amount_edema: float
    amount_necrosis: float
    amount_enhancing: float
    extent_of_tumor: float
    proportion_of_tumor: float
    elongation: float
    flatness: float
    minor_axis_length: float
    major_axis_length: float
    max_2d_diameter_row: float
    max_2d_diameter_column: float
    max_2d_diameter_slice: float
    max_3d_diameter: float
    sphericity: float
    surface_area: float
    age: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)


def sorted_eigh3(cov: np.ndarray):
    """Eigen-decomposition of a symmetric PSD 3x3 matrix.

    Returns (values, vectors) with values descending and clamped at 0;
    vectors[:, i] pairs with values[i].
    """
    vals, vecs = np.linalg.eigh(cov)
    return np.maximum(vals[::-1], 0.0), vecs[:, ::-1]


def statistical_features(labels: LabelVolume, brain: np.ndarray) -> tuple:
    """(edema, necrosis, enhancing, whole-tumor) volumes in mm^3 plus the
    whole-tumor / brain voxel-count ratio."""
    brain = np.asarray(brain, dtype=bool)
    n_brain = int(brain.sum())
    if n_brain == 0:
        raise FeatureError("empty brain mask")
    vv = labels.voxel_volume_mm3
    lab = labels.data
    n_ed = int(np.count_nonzero(lab == LABEL_EDEMA))
    n_ncr = int(np.count_nonzero(lab == LABEL_NECROSIS))
    n_et = int(np.count_nonzero(lab == LABEL_ENHANCING))
    n_wt = n_ed + n_ncr + n_et
    return (n_ed * vv, n_ncr * vv, n_et * vv, n_wt * vv, n_wt / n_brain)


def _max_pairwise(points: np.ndarray) -> float:
    """Largest euclidean distance over point pairs; 0 for < 2 points."""
    if len(points) < 2:
        return 0.0
    best = 0.0
    # row-by-row keeps memory linear; boundary sets are small at desk scale
    for i in range(len(points) - 1):
        d2 = ((points[i + 1:] - points[i]) ** 2).sum(axis=1).max()
        if d2 > best:
            best = d2
    return float(np.sqrt(best))


def shape_features(necrosis: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> dict:
    """The 10 shape descriptors of a binary necrosis mask.

    Empty masks yield all zeros; degenerate covariances (single voxels,
    collinear sets) zero the undefined ratios rather than propagating NaN.
    """
    mask = np.asarray(necrosis, dtype=bool)
    names = FEATURE_NAMES[5:15]
    if not mask.any():
        return {n: 0.0 for n in names}

    scale = np.asarray(spacing, dtype=np.float64)
    coords = np.argwhere(mask) * scale
    centered = coords - coords.mean(axis=0)
    cov = centered.T @ centered / len(coords)
    lam, _ = sorted_eigh3(cov)

    major = 4.0 * np.sqrt(lam[0])
    minor = 4.0 * np.sqrt(lam[1])
    elongation = float(np.sqrt(lam[1] / lam[0])) if lam[0] > 0 else 0.0
    flatness = float(np.sqrt(lam[2] / lam[0])) if lam[0] > 0 else 0.0

    # exposed faces: oriented slab area per axis
    face_area = (scale[1] * scale[2], scale[0] * scale[2], scale[0] * scale[1])
    padded = np.pad(mask, 1)
    area = 0.0
    for ax in range(3):
        lo = tuple(slice(1, -1) if a != ax else slice(0, -2) for a in range(3))
        hi = tuple(slice(1, -1) if a != ax else slice(2, None) for a in range(3))
        exposed = (mask & ~padded[lo]).sum() + (mask & ~padded[hi]).sum()
        area += float(exposed) * face_area[ax]

    volume = float(mask.sum()) * float(scale.prod())
    sphericity = float(np.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / area)

    surface = boundary_voxels(mask) * scale
    diam_3d = _max_pairwise(surface)

    def plane_diameter(fixed_axis: int) -> float:
        keep = [a for a in range(3) if a != fixed_axis]
        best = 0.0
        for value in np.unique(surface[:, fixed_axis]):
            pts = surface[surface[:, fixed_axis] == value][:, keep]
            best = max(best, _max_pairwise(pts))
        return best

    return {
        "elongation": elongation,
        "flatness": flatness,
        "minor_axis_length": float(minor),
        "major_axis_length": float(major),
        "max_2d_diameter_row": plane_diameter(2),     # sagittal: fixed width
        "max_2d_diameter_column": plane_diameter(1),  # coronal: fixed height
        "max_2d_diameter_slice": plane_diameter(0),   # axial: fixed depth
        "max_3d_diameter": diam_3d,
        "sphericity": sphericity,
        "surface_area": area,
    }


def build_feature_vector(labels: LabelVolume, brain: np.ndarray, age: float,
                         case_id: str) -> FeatureVector:
    """Assemble the full 16-entry record, applying the missing-necrosis rule."""
    if age is None or not age > 0:
        raise FeatureError(f"case {case_id}: age missing or non-positive ({age})")
    necrosis = labels.data == LABEL_NECROSIS
    if not necrosis.any():
        # absent necrosis zeroes every feature except age
        zeros = {n: 0.0 for n in FEATURE_NAMES[:15]}
        return FeatureVector(case_id=case_id, age=float(age), **zeros)
    ed, ncr, et, wt, prop = statistical_features(labels, brain)
    shape = shape_features(necrosis, labels.spacing)
    return FeatureVector(
        case_id=case_id,
        amount_edema=ed,
        amount_necrosis=ncr,
        amount_enhancing=et,
        extent_of_tumor=wt,
        proportion_of_tumor=prop,
        age=float(age),
        **shape,
    )


def write_features_csv(rows, path, extra_cols=()) -> None:
    """rows: iterable of (FeatureVector, dict-of-extras); extras appended."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["case_id", *FEATURE_NAMES, *extra_cols])
        for vec, extras in rows:
            row = [vec.case_id]
            row += [repr(float(getattr(vec, n))) for n in FEATURE_NAMES]
            row += [extras.get(c, "") for c in extra_cols]
            w.writerow(row)


def read_features_csv(path):
    """Returns (list of FeatureVector, list of extras dicts)."""
    vectors, extras = [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            kwargs = {n: float(row[n]) for n in FEATURE_NAMES}
            vectors.append(FeatureVector(case_id=row["case_id"], **kwargs))
            extras.append({k: v for k, v in row.items()
                           if k not in FEATURE_NAMES and k != "case_id"})
    return vectors, extras
