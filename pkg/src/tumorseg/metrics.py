"""Segmentation evaluation: DSC, sensitivity, specificity, Hausdorff95.

Conventions for degenerate masks follow the public BraTS evaluation tool:
both-empty DSC is 1, empty truth gives sensitivity 1, an empty-vs-nonempty
pair scores the HD95 sentinel (373.13 mm by default). Percentiles use
linear interpolation between order statistics. All distances are between
voxel centers in physical mm.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np
from scipy.spatial import cKDTree

from .volume import LabelVolume, Region, VolumeError, region_mask

HD95_EMPTY_SENTINEL = 373.13


@dataclass(frozen=True)
class RegionScores:
    case_id: str
    region: str
    dsc: float
    sensitivity: float
    specificity: float
    hausdorff95: float


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    stddev: float
    median: float
    q25: float
    q75: float


def _counts(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise VolumeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = pred.size - tp - fp - fn
    return tp, fp, fn, tn


def dsc(pred, truth) -> float:
    """2*TP / (2*TP + FP + FN); 1.0 when both masks are empty."""
    tp, fp, fn, _ = _counts(pred, truth)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def sensitivity(pred, truth) -> float:
    """TP / (TP + FN); 1.0 when the truth mask is empty."""
    tp, _, fn, _ = _counts(pred, truth)
    return 1.0 if tp + fn == 0 else tp / (tp + fn)


def specificity(pred, truth) -> float:
    """TN / (TN + FP); 1.0 when the truth mask covers the grid."""
    _, fp, _, tn = _counts(pred, truth)
    return 1.0 if tn + fp == 0 else tn / (tn + fp)


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a background 6-neighbor or on the grid edge."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1)
    interior = np.ones_like(mask)
    for ax in range(3):
        lo = tuple(slice(1, -1) if a != ax else slice(0, -2) for a in range(3))
        hi = tuple(slice(1, -1) if a != ax else slice(2, None) for a in range(3))
        interior &= padded[lo] & padded[hi]
    return np.argwhere(mask & ~interior)


def hausdorff95(pred, truth, spacing=(1.0, 1.0, 1.0),
                empty_sentinel: float = HD95_EMPTY_SENTINEL) -> float:
    """Symmetric 95th-percentile surface distance in mm.

    max(P95 of nearest-boundary distances pred->truth, P95 truth->pred);
    0 when both masks are empty, the sentinel when exactly one is.
    """
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise VolumeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    p_any, t_any = pred.any(), truth.any()
    if not p_any and not t_any:
        return 0.0
    if p_any != t_any:
        return empty_sentinel

    scale = np.asarray(spacing, dtype=np.float64)
    a = boundary_voxels(pred) * scale
    b = boundary_voxels(truth) * scale
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float(max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)))


def score_regions(pred: LabelVolume, truth: LabelVolume, case_id: str = "") -> list:
    """RegionScores for ET, WT, TC (the reporting order)."""
    if pred.dims != truth.dims or pred.spacing != truth.spacing:
        raise VolumeError("prediction and truth geometries differ")
    out = []
    for region in (Region.ET, Region.WT, Region.TC):
        pm = region_mask(pred, region)
        tm = region_mask(truth, region)
        out.append(RegionScores(
            case_id=case_id,
            region=region.name,
            dsc=dsc(pm, tm),
            sensitivity=sensitivity(pm, tm),
            specificity=specificity(pm, tm),
            hausdorff95=hausdorff95(pm, tm, pred.spacing),
        ))
    return out


def summarize(values) -> SummaryStats:
    """Mean, population stddev, median, and quartiles (linear interpolation)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise VolumeError("cannot summarize an empty score list")
    return SummaryStats(
        mean=float(arr.mean()),
        stddev=float(arr.std()),
        median=float(np.percentile(arr, 50)),
        q25=float(np.percentile(arr, 25)),
        q75=float(np.percentile(arr, 75)),
    )


METRIC_NAMES = ("dsc", "sensitivity", "specificity", "hausdorff95")
REGION_ORDER = ("ET", "WT", "TC")
STAT_ORDER = ("mean", "stddev", "median", "q25", "q75")


def summarize_cohort(scores) -> dict:
    """{(metric, region): SummaryStats} over a list of RegionScores."""
    scores = list(scores)
    if not scores:
        raise VolumeError("cannot summarize an empty cohort")
    out = {}
    for metric in METRIC_NAMES:
        for region in REGION_ORDER:
            vals = [getattr(s, metric) for s in scores if s.region == region]
            out[(metric, region)] = summarize(vals)
    return out


def write_case_csv(scores, path) -> None:
    cols = [f.name for f in fields(RegionScores)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for s in scores:
            w.writerow([repr(getattr(s, c)) if isinstance(getattr(s, c), float)
                        else getattr(s, c) for c in cols])


def write_summary_csv(scores, path) -> None:
    """One row per (metric, statistic), columns ET / WT / TC."""
    summary = summarize_cohort(scores)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "statistic", *REGION_ORDER])
        for metric in METRIC_NAMES:
            for stat in STAT_ORDER:
                row = [metric, stat]
                for region in REGION_ORDER:
                    row.append(repr(getattr(summary[(metric, region)], stat)))
                w.writerow(row)
