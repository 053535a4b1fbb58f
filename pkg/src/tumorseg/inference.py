"""Whole-volume prediction: half-stride sliding window with flip averaging.

Every voxel's probability vector is the arithmetic mean over all windows
covering it; volumes are zero-padded up to a full window grid and cropped
back after fusion. Accumulation runs in float64 with a fixed window order,
so results are deterministic.
"""
from __future__ import annotations

import numpy as np

from .volume import LabelVolume, ModalityStack, Volume, VolumeError

BRATS_LABELS = np.array([0, 1, 2, 4], dtype=np.uint8)


class ProbVolume:
    """Per-voxel class probabilities over the source grid.

    data: (classes, depth, height, width) float64, each voxel summing to 1.
    """

    def __init__(self, dims, spacing, data):
        data = np.asarray(data, dtype=np.float64)
        if data.shape[1:] != tuple(dims):
            raise VolumeError(f"probability grid {data.shape[1:]} != dims {dims}")
        sums = data.sum(axis=0)
        if not np.all(np.abs(sums - 1.0) <= 1e-5):  # also rejects NaN
            raise VolumeError("per-voxel probabilities do not sum to 1")
        self.dims = tuple(dims)
        self.spacing = tuple(spacing)
        self.data = data

    @property
    def classes(self) -> int:
        return self.data.shape[0]

    def flipped_width(self) -> "ProbVolume":
        return ProbVolume(self.dims, self.spacing, self.data[..., ::-1])


def _as_predict_fn(model):
    """Accept a Model (predict_patch) or a bare callable on (C, p, p, p)."""
    if hasattr(model, "predict_patch"):
        return model.predict_patch
    return model


def _window_origins(dim: int, window: int, stride: int):
    """Origins covering [0, padded_dim) and the padded extent itself."""
    if dim <= window:
        return [0], window
    n_steps = -(-(dim - window) // stride)  # ceil
    padded = window + n_steps * stride
    return list(range(0, padded - window + 1, stride)), padded


def sliding_window_predict(model, stack: ModalityStack, window: int,
                           stride: int | None = None, classes: int = 4) -> ProbVolume:
    """Mean-fused overlapping window predictions over the whole stack."""
    predict = _as_predict_fn(model)
    stride = window // 2 if stride is None else stride
    if stride < 1 or stride > window:
        raise VolumeError(f"stride {stride} must be in [1, window={window}]")
    dims = stack.dims
    vol = stack.as_array()

    origins, padded = zip(*(_window_origins(d, window, stride) for d in dims))
    padded_vol = np.zeros((4,) + tuple(padded), dtype=vol.dtype)
    padded_vol[:, :dims[0], :dims[1], :dims[2]] = vol

    accum = np.zeros((classes,) + tuple(padded), dtype=np.float64)
    counts = np.zeros(tuple(padded), dtype=np.int64)
    for oz in origins[0]:
        for oy in origins[1]:
            for ox in origins[2]:
                sl = (slice(oz, oz + window), slice(oy, oy + window),
                      slice(ox, ox + window))
                probs = predict(padded_vol[(slice(None),) + sl])
                accum[(slice(None),) + sl] += probs
                counts[sl] += 1

    fused = accum / counts  # every voxel is covered at least once
    fused = fused[:, :dims[0], :dims[1], :dims[2]]
    return ProbVolume(dims, stack.spacing, fused)


def _flip_stack(stack: ModalityStack) -> ModalityStack:
    def flip(v: Volume) -> Volume:
        return Volume(v.dims, v.spacing, v.data[..., ::-1])

    return ModalityStack(flip(stack.t1), flip(stack.t2), flip(stack.t1c),
                         flip(stack.flair), stack.case_id)


def flip_averaged_predict(model, stack: ModalityStack, window: int,
                          stride: int | None = None, classes: int = 4) -> ProbVolume:
    """0.5 * (predict(x) + unflip(predict(flip(x)))), voxelwise."""
    direct = sliding_window_predict(model, stack, window, stride, classes)
    mirrored = sliding_window_predict(model, _flip_stack(stack), window,
                                      stride, classes)
    data = 0.5 * (direct.data + mirrored.data[..., ::-1])
    return ProbVolume(stack.dims, stack.spacing, data)


def argmax_labels(pv: ProbVolume) -> LabelVolume:
    """Per-voxel argmax channel remapped to BraTS labels; ties take the
    lower channel index."""
    if pv.classes != 4:
        raise VolumeError(f"expected 4 classes, got {pv.classes}")
    channel = pv.data.argmax(axis=0)
    return LabelVolume(pv.dims, pv.spacing, BRATS_LABELS[channel])
