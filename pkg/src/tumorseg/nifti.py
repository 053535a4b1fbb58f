"""Minimal single-file NIfTI-1 reader/writer.

Covers the subset needed for skull-stripped, co-registered scans: 3D scalar
volumes in .nii or .nii.gz, datatypes uint8/int16/uint16/float32/float64,
scl_slope/scl_inter intensity scaling, spacing from pixdim. Orientation
matrices (qform/sform) are deliberately ignored; axes are taken as stored.
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .volume import LabelVolume, Volume, VolumeError

HEADER_SIZE = 348

# NIfTI-1 datatype codes -> numpy dtypes (without byte order)
_DTYPES = {
    2: "u1",    # uint8
    4: "i2",    # int16
    16: "f4",   # float32
    64: "f8",   # float64
    512: "u2",  # uint16
}


class NiftiError(VolumeError):
    """Raised for files this reader cannot or will not interpret."""


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_nifti(path) -> Volume:
    """Read a 3D scalar NIfTI-1 file into a Volume (float32).

    scl_slope/scl_inter are applied when slope is nonzero; spacing comes
    from pixdim[1..3]. NIfTI stores the first (x/width) axis fastest, so the
    on-disk linear order maps directly onto our (depth, height, width) grid.
    """
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"{path}: file shorter than a NIfTI-1 header")

    magic = raw[344:348]
    if magic[:3] == b"ni1":
        raise NiftiError(f"{path}: detached header/image pairs unsupported")
    if magic[:3] != b"n+1":
        raise NiftiError(f"{path}: not a NIfTI-1 file (bad magic {magic!r})")

    # endianness is detected from sizeof_hdr
    for order in ("<", ">"):
        if struct.unpack(order + "i", raw[0:4])[0] == HEADER_SIZE:
            break
    else:
        raise NiftiError(f"{path}: sizeof_hdr is not 348 in either byte order")

    dim = struct.unpack(order + "8h", raw[40:56])
    if dim[0] != 3:
        raise NiftiError(f"{path}: unsupported rank dim[0]={dim[0]} (need 3)")
    nx, ny, nz = dim[1], dim[2], dim[3]

    datatype, _bitpix = struct.unpack(order + "2h", raw[70:74])
    if datatype not in _DTYPES:
        raise NiftiError(f"{path}: unsupported datatype code {datatype}")
    dtype = np.dtype(order + _DTYPES[datatype])

    pixdim = struct.unpack(order + "8f", raw[76:108])
    spacing = (float(pixdim[3]), float(pixdim[2]), float(pixdim[1]))
    if any(not (s > 0) for s in spacing):
        raise NiftiError(f"{path}: non-positive pixdim {pixdim[1:4]}")

    vox_offset = struct.unpack(order + "f", raw[108:112])[0]
    scl_slope, scl_inter = struct.unpack(order + "2f", raw[112:120])

    offset = int(vox_offset)
    count = nx * ny * nz
    body = raw[offset:offset + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise NiftiError(f"{path}: truncated voxel data")

    values = np.frombuffer(body, dtype=dtype).astype(np.float32)
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        values = values * np.float32(scl_slope) + np.float32(scl_inter)

    # disk order: x fastest, z slowest == our (z, y, x) C order
    return Volume((nz, ny, nx), spacing, values.reshape(nz, ny, nx))


def load_nifti_labels(path) -> LabelVolume:
    """Read a NIfTI-1 segmentation into a LabelVolume (validates labels)."""
    vol = load_nifti(path)
    rounded = np.rint(vol.data)
    if not np.array_equal(rounded, vol.data):
        raise NiftiError(f"{path}: segmentation has non-integer values")
    return LabelVolume(vol.dims, vol.spacing, rounded.astype(np.uint8))


def write_nifti(vol, path) -> None:
    """Write a Volume (float32) or LabelVolume (uint8) as single-file NIfTI-1.

    Gzip-compresses when the path ends in .gz. Header carries only geometry;
    qform/sform codes are left 0.
    """
    if isinstance(vol, Volume):
        arr = np.ascontiguousarray(vol.data, dtype="<f4")
        datatype, bitpix = 16, 32
    elif isinstance(vol, LabelVolume):
        arr = np.ascontiguousarray(vol.data, dtype="u1")
        datatype, bitpix = 2, 8
    else:
        raise NiftiError(f"cannot write object of type {type(vol).__name__}")

    d, h, w = vol.dims
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, w, h, d, 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, datatype, bitpix)
    pixdim = (1.0, vol.spacing[2], vol.spacing[1], vol.spacing[0], 0, 0, 0, 0)
    struct.pack_into("<8f", header, 76, *pixdim)
    struct.pack_into("<f", header, 108, 352.0)   # vox_offset
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<b", header, 123, 2)       # xyzt_units: mm
    header[344:348] = b"n+1\x00"

    blob = bytes(header) + b"\x00" * 4 + arr.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        # fixed mtime for byte-identical outputs across runs
        with open(path, "wb") as f:
            with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as gz:
                gz.write(blob)
    else:
        path.write_bytes(blob)
