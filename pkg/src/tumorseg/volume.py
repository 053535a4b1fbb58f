"""Volumetric data model: scalar volumes, label volumes, modality stacks.

Axis convention everywhere: (depth, height, width), C-contiguous with width
fastest. Spacing is physical voxel size in mm per axis, same order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

# BraTS label codes: 0 background, 1 necrotic/non-enhancing core, 2 edema,
# 4 enhancing tumor. Label 3 is never used.
VALID_LABELS = (0, 1, 2, 4)

LABEL_NECROSIS = 1
LABEL_EDEMA = 2
LABEL_ENHANCING = 4


class VolumeError(ValueError):
    """Raised for malformed volumes or volume files."""


class Region(Enum):
    """Nested evaluation regions over the label codes."""

    WT = frozenset({1, 2, 4})  # whole tumor
    TC = frozenset({1, 4})     # tumor core
    ET = frozenset({4})        # enhancing tumor

    @property
    def labels(self) -> frozenset:
        return self.value


def _check_geometry(dims, spacing, n_values):
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    if len(dims) != 3 or len(spacing) != 3:
        raise VolumeError("dims and spacing must each have 3 entries")
    if any(d < 1 for d in dims):
        raise VolumeError(f"all dims must be >= 1, got {dims}")
    if any(not (s > 0) for s in spacing):
        raise VolumeError(f"all spacing components must be > 0, got {spacing}")
    expected = dims[0] * dims[1] * dims[2]
    if n_values != expected:
        raise VolumeError(f"data length {n_values} != product of dims {expected}")
    return dims, spacing


@dataclass(frozen=True)
class Volume:
    """One scalar 3D grid with physical spacing.

    data is float32, shape (depth, height, width). Immutable after
    construction; the array is marked read-only.
    """

    dims: tuple
    spacing: tuple
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True).reshape(-1)
        dims, spacing = _check_geometry(self.dims, self.spacing, arr.size)
        if not np.all(np.isfinite(arr)):
            raise VolumeError("volume contains non-finite values")
        arr = arr.reshape(dims)
        arr.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", arr)

    @property
    def voxel_volume_mm3(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(self.dims, self.spacing, data)


@dataclass(frozen=True)
class LabelVolume:
    """Per-voxel class labels in {0, 1, 2, 4}, stored as uint8."""

    dims: tuple
    spacing: tuple
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.uint8, copy=True).reshape(-1)
        dims, spacing = _check_geometry(self.dims, self.spacing, arr.size)
        bad = ~np.isin(arr, VALID_LABELS)
        if bad.any():
            raise VolumeError(
                f"invalid label values {sorted(np.unique(arr[bad]).tolist())}; "
                f"expected subset of {VALID_LABELS}"
            )
        arr = arr.reshape(dims)
        arr.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", arr)

    @property
    def voxel_volume_mm3(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    def with_data(self, data: np.ndarray) -> "LabelVolume":
        return LabelVolume(self.dims, self.spacing, data)


@dataclass(frozen=True)
class ModalityStack:
    """The four co-registered MR contrasts of one case."""

    t1: Volume
    t2: Volume
    t1c: Volume
    flair: Volume
    case_id: str

    # channel order used for all network inputs
    MODALITIES = ("t1", "t2", "t1c", "flair")

    def __post_init__(self):
        vols = self.volumes()
        ref = vols[0]
        for name, v in zip(self.MODALITIES[1:], vols[1:]):
            if v.dims != ref.dims or v.spacing != ref.spacing:
                raise VolumeError(
                    f"modality {name} geometry {v.dims}/{v.spacing} does not "
                    f"match t1 {ref.dims}/{ref.spacing}"
                )

    def volumes(self) -> tuple:
        return (self.t1, self.t2, self.t1c, self.flair)

    @property
    def dims(self) -> tuple:
        return self.t1.dims

    @property
    def spacing(self) -> tuple:
        return self.t1.spacing

    def as_array(self) -> np.ndarray:
        """Channel-stacked (4, depth, height, width) float32 array."""
        return np.stack([v.data for v in self.volumes()])


def region_mask(labels: LabelVolume, region: Region) -> np.ndarray:
    """Boolean mask, true where the voxel label belongs to the region."""
    return np.isin(labels.data, sorted(region.labels))


def brain_mask(stack: ModalityStack) -> np.ndarray:
    """Voxels where any modality is nonzero (skull-stripped background is 0)."""
    m = stack.t1.data != 0
    for v in (stack.t2, stack.t1c, stack.flair):
        m = m | (v.data != 0)
    return m


# ---------------------------------------------------------------------------
# Internal ".mvol" format: one UTF-8 JSON line, then the raw little-endian
# voxel body. Bit-exact round trips, no external imaging dependency.
# ---------------------------------------------------------------------------

_DTYPE_TAGS = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def write_internal(vol, path) -> None:
    """Write a Volume or LabelVolume to the internal .mvol format."""
    if isinstance(vol, Volume):
        tag = "f32"
    elif isinstance(vol, LabelVolume):
        tag = "u8"
    else:
        raise VolumeError(f"cannot serialize object of type {type(vol).__name__}")
    header = {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "dtype": tag,
    }
    body = np.ascontiguousarray(vol.data, dtype=_DTYPE_TAGS[tag]).tobytes()
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        f.write(body)


def load_internal(path):
    """Load a .mvol file; returns Volume (f32) or LabelVolume (u8)."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise VolumeError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
        dims = [int(d) for d in header["dims"]]
        spacing = [float(s) for s in header["spacing"]]
        tag = header["dtype"]
        dtype = _DTYPE_TAGS[tag]
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise VolumeError(f"{path}: malformed header ({exc})") from exc
    body = raw[nl + 1:]
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(body) != expected:
        raise VolumeError(
            f"{path}: body is {len(body)} bytes, header implies {expected}"
        )
    arr = np.frombuffer(body, dtype=dtype).reshape(dims)
    if tag == "f32":
        return Volume(tuple(dims), tuple(spacing), arr)
    return LabelVolume(tuple(dims), tuple(spacing), arr)
