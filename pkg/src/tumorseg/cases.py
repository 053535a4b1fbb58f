"""Case-directory layout and survival metadata CSV.

A cases directory holds one subdirectory per case with t1/t2/t1c/flair
(.mvol) and optionally seg.mvol, plus a survival.csv mapping case ids to
age, survival days, and resection status.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .volume import LabelVolume, ModalityStack, Volume, VolumeError
from .volume import load_internal, write_internal

MODALITY_FILES = ("t1", "t2", "t1c", "flair")


class MissingInputError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class SurvivalRecord:
    case_id: str
    age: float
    survival_days: float | None
    resection_status: str


def case_ids(cases_dir) -> list:
    root = Path(cases_dir)
    if not root.is_dir():
        raise MissingInputError(f"cases directory {root} does not exist")
    ids = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not ids:
        raise MissingInputError(f"no case subdirectories under {root}")
    return ids


def load_stack(cases_dir, case_id: str) -> ModalityStack:
    root = Path(cases_dir) / case_id
    vols = {}
    for m in MODALITY_FILES:
        path = root / f"{m}.mvol"
        if not path.exists():
            raise MissingInputError(f"{path} missing")
        vol = load_internal(path)
        if not isinstance(vol, Volume):
            raise VolumeError(f"{path}: expected a scalar volume")
        vols[m] = vol
    return ModalityStack(vols["t1"], vols["t2"], vols["t1c"], vols["flair"],
                         case_id)


def save_stack(stack: ModalityStack, cases_dir) -> None:
    root = Path(cases_dir) / stack.case_id
    root.mkdir(parents=True, exist_ok=True)
    for m in MODALITY_FILES:
        write_internal(getattr(stack, m), root / f"{m}.mvol")


def load_labels(path) -> LabelVolume:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{path} missing")
    vol = load_internal(path)
    if not isinstance(vol, LabelVolume):
        raise VolumeError(f"{path}: expected a label volume")
    return vol


def write_survival_csv(records, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["case_id", "age", "survival_days", "resection_status"])
        for r in records:
            days = "" if r.survival_days is None else repr(float(r.survival_days))
            w.writerow([r.case_id, repr(float(r.age)), days, r.resection_status])


def read_survival_csv(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"survival metadata {path} missing")
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            days = row.get("survival_days", "")
            out[row["case_id"]] = SurvivalRecord(
                case_id=row["case_id"],
                age=float(row["age"]),
                survival_days=float(days) if days else None,
                resection_status=row.get("resection_status", ""),
            )
    return out
