"""Synthetic phantom cases: ellipsoidal brain, nested tumor shells, four
modality intensity profiles, and plausible survival metadata.

The tumor is a sphere of edema around an enhancing shell around a necrotic
core, sized so the whole tumor clears the 1000-voxel post-processing floor
and the enhancing shell clears the 300-voxel conversion threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import LabelVolume, ModalityStack, Volume

# mean intensity by (modality, tissue); tissues: brain, necrosis, edema, enhancing
_PROFILES = {
    "t1":    {"brain": 1.00, "ncr": 0.40, "ed": 0.80, "et": 1.20},
    "t2":    {"brain": 0.70, "ncr": 1.10, "ed": 1.30, "et": 0.90},
    "t1c":   {"brain": 1.00, "ncr": 0.50, "ed": 0.90, "et": 1.80},
    "flair": {"brain": 0.80, "ncr": 0.70, "ed": 1.60, "et": 1.10},
}
_NOISE_STD = 0.05


@dataclass(frozen=True)
class PhantomSpec:
    grid: int = 40
    brain_radius_frac: float = 0.42
    core_radius: float = 4.0       # necrosis
    enhancing_radius: float = 6.5  # necrosis + enhancing shell
    edema_radius: float = 9.0      # whole tumor
    spacing: tuple = (1.0, 1.0, 1.0)


def make_phantom_case(case_id: str, seed: int,
                      spec: PhantomSpec = PhantomSpec()):
    """Returns (ModalityStack, LabelVolume, metadata dict).

    Metadata carries age, survival_days (a noisy decreasing function of age
    and necrosis load), and resection_status "GTR".
    """
    rng = np.random.default_rng(seed)
    g = spec.grid
    center = g / 2.0 - 0.5
    zyx = np.indices((g, g, g), dtype=np.float64)

    brain_r = g * spec.brain_radius_frac
    brain = (((zyx - center) ** 2).sum(axis=0)) <= brain_r ** 2

    # per-case size jitter varies the necrosis load (and so survival) while
    # keeping WT above 1000 voxels and the enhancing shell above 300
    s = rng.uniform(0.85, 1.3)
    r_core = spec.core_radius * s
    r_enh = spec.enhancing_radius * s
    r_edema = spec.edema_radius * s

    # tumor center jitters inside the brain but keeps the edema ball interior
    max_off = max(brain_r - r_edema - 1.0, 0.0)
    offset = rng.uniform(-max_off / np.sqrt(3.0), max_off / np.sqrt(3.0), size=3)
    d2 = ((zyx - (center + offset)[:, None, None, None]) ** 2).sum(axis=0)

    labels = np.zeros((g, g, g), dtype=np.uint8)
    labels[brain & (d2 <= r_edema ** 2)] = 2
    labels[brain & (d2 <= r_enh ** 2)] = 4
    labels[brain & (d2 <= r_core ** 2)] = 1

    tissue = np.full((g, g, g), "none", dtype="U5")
    tissue[brain] = "brain"
    tissue[labels == 1] = "ncr"
    tissue[labels == 2] = "ed"
    tissue[labels == 4] = "et"

    volumes = {}
    for modality, profile in _PROFILES.items():
        img = np.zeros((g, g, g), dtype=np.float64)
        for name, level in profile.items():
            sel = tissue == name
            img[sel] = level + rng.normal(0.0, _NOISE_STD, size=int(sel.sum()))
        # brain voxels must stay nonzero: they define the brain mask
        img[brain] = np.maximum(img[brain], 0.05)
        volumes[modality] = Volume((g, g, g), spec.spacing, img)

    stack = ModalityStack(volumes["t1"], volumes["t2"], volumes["t1c"],
                          volumes["flair"], case_id)
    label_vol = LabelVolume((g, g, g), spec.spacing, labels)

    age = float(np.round(rng.uniform(45.0, 75.0), 1))
    necrosis_mm3 = float((labels == 1).sum()) * label_vol.voxel_volume_mm3
    days = 900.0 - 1.2 * necrosis_mm3 - 4.0 * (age - 45.0) + rng.normal(0.0, 40.0)
    meta = {
        "age": age,
        "survival_days": float(np.round(max(days, 30.0), 1)),
        "resection_status": "GTR",
    }
    return stack, label_vol, meta
