"""Reverse-mode differentiable 3D kernels on 5-axis (B, C, D, H, W) arrays.

A DiffTensor wraps a value array plus an on-demand gradient; ops record a
backward closure on a tape of parents. The set is exactly what a dense
encoder-decoder needs: 3D cross-correlation, 2x max-pool, nearest-neighbor
upsampling, batch-statistics normalization, PReLU, channel softmax, and
channel concatenation. Everything is stride-1, zero-padded, dtype-agnostic
(float32 in production, float64 for gradient checking).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class AutodiffError(ValueError):
    pass


class DiffTensor:
    """Node in the reverse-mode graph: value, lazy grad, backward closure."""

    __slots__ = ("value", "grad", "op", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None, op=None):
        self.value = np.asarray(value)
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def detach(self) -> np.ndarray:
        return self.value

    def zero_grad(self):
        self.grad = None

    def backprop(self, seed: np.ndarray) -> None:
        """Propagate d(loss)/d(self) = seed back to every reachable leaf."""
        seed = np.asarray(seed, dtype=self.value.dtype)
        if seed.shape != self.value.shape:
            raise AutodiffError(
                f"seed shape {seed.shape} != value shape {self.value.shape}"
            )
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg


def parameter(array, dtype=np.float32) -> DiffTensor:
    """Leaf tensor holding trainable weights."""
    return DiffTensor(np.asarray(array, dtype=dtype))


def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    width = ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad))
    return np.pad(x, width)


def conv3d(x: DiffTensor, w: DiffTensor, b: DiffTensor | None,
           padding: int = 1) -> DiffTensor:
    """Stride-1 3D cross-correlation with zero padding.

    x: (B, Cin, D, H, W); w: (Cout, Cin, k, k, k); b: (Cout,) or None
    (convolutions feeding a normalization carry no bias, which would be
    cancelled by the mean subtraction). With padding = (k-1)//2 the spatial
    dims are preserved. No kernel flip.
    """
    cout, cin, k, _, _ = w.shape
    if x.shape[1] != cin:
        raise AutodiffError(f"input has {x.shape[1]} channels, kernel expects {cin}")
    xp = _pad_spatial(x.value, padding)
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    # win: (B, Cin, D', H', W', k, k, k); contract Cin and the window taps
    y = np.tensordot(win, w.value, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    y = np.moveaxis(y, -1, 1)
    if b is not None:
        y = y + b.value[None, :, None, None, None]
    y = np.ascontiguousarray(y)

    def backward(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        # dL/dx: full correlation of g with the spatially flipped kernel
        q = k - 1 - padding
        gp = _pad_spatial(g, q) if q >= 0 else g[:, :, -q:q, -q:q, -q:q]
        gwin = sliding_window_view(gp, (k, k, k), axis=(2, 3, 4))
        wf = w.value[:, :, ::-1, ::-1, ::-1]
        gx = np.tensordot(gwin, wf, axes=([1, 5, 6, 7], [0, 2, 3, 4]))
        gx = np.ascontiguousarray(np.moveaxis(gx, -1, 1))
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    parents = (x, w) if b is None else (x, w, b)
    return DiffTensor(y, parents, backward, op="conv3d")


def maxpool3d(x: DiffTensor, window: int = 2) -> DiffTensor:
    """Non-overlapping window-max pooling; gradient routes to the argmax.

    Ties break to the first element in (z, y, x) scan order of the window.
    """
    b, c, d, h, w = x.shape
    m = window
    if d % m or h % m or w % m:
        raise AutodiffError(f"spatial dims {(d, h, w)} not divisible by {m}")
    blocks = x.value.reshape(b, c, d // m, m, h // m, m, w // m, m)
    blocks = np.moveaxis(blocks, (3, 5, 7), (5, 6, 7))  # (..., m, m, m)
    flat = blocks.reshape(b, c, d // m, h // m, w // m, m * m * m)
    idx = flat.argmax(axis=-1)  # first max wins
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[..., None], g[..., None], axis=-1)
        gb = gf.reshape(b, c, d // m, h // m, w // m, m, m, m)
        gb = np.moveaxis(gb, (5, 6, 7), (3, 5, 7))
        return (np.ascontiguousarray(gb.reshape(b, c, d, h, w)),)

    return DiffTensor(np.ascontiguousarray(y), (x,), backward, op="maxpool3d")


def upsample3d(x: DiffTensor, factor: int = 2) -> DiffTensor:
    """Nearest-neighbor replication; gradient sums over replicated cells."""
    f = factor
    y = x.value.repeat(f, axis=2).repeat(f, axis=3).repeat(f, axis=4)

    def backward(g):
        b, c, d, h, w = x.shape
        gb = g.reshape(b, c, d, f, h, f, w, f).sum(axis=(3, 5, 7))
        return (gb,)

    return DiffTensor(y, (x,), backward, op="upsample3d")


def batchstat_norm(x: DiffTensor, gamma: DiffTensor, beta: DiffTensor,
                   eps: float = 1e-5) -> DiffTensor:
    """Normalize each channel by the statistics of the current input.

    Mean and population variance are taken over batch and space, at train
    and test time alike (no running averages). A zero-variance channel is
    normalized by eps alone.
    """
    axes = (0, 2, 3, 4)
    n = x.value.size // x.shape[1]
    if n < 2:
        raise AutodiffError("per-channel count must be >= 2 for batch statistics")
    mu = x.value.mean(axis=axes, keepdims=True)
    var = x.value.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    gshape = (1, -1, 1, 1, 1)
    y = gamma.value.reshape(gshape) * xhat + beta.value.reshape(gshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        gx = gamma.value.reshape(gshape) * inv * (g - gm - xhat * gxm)
        return gx, ggamma, gbeta

    return DiffTensor(y, (x, gamma, beta), backward, op="batchstat_norm")


def prelu(x: DiffTensor, a: DiffTensor) -> DiffTensor:
    """Parametric ReLU with one learned negative slope per channel."""
    ashape = (1, -1, 1, 1, 1)
    pos = x.value > 0
    y = np.where(pos, x.value, a.value.reshape(ashape) * x.value)

    def backward(g):
        gx = np.where(pos, g, a.value.reshape(ashape) * g)
        ga = (g * x.value * ~pos).sum(axis=(0, 2, 3, 4))
        return gx, ga

    return DiffTensor(y, (x, a), backward, op="prelu")


def softmax_channels(x: DiffTensor) -> DiffTensor:
    """Channel softmax per voxel, max-shifted for stability."""
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return DiffTensor(s, (x,), backward, op="softmax_channels")


def concat_channels(xs) -> DiffTensor:
    """Stack tensors along the channel axis; backward splits the gradient."""
    xs = tuple(xs)
    widths = [t.shape[1] for t in xs]
    y = np.concatenate([t.value for t in xs], axis=1)
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return DiffTensor(y, xs, backward, op="concat_channels")
