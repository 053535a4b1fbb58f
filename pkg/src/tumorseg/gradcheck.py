"""Central finite-difference verification of every backward pass.

The numeric gradient is d f / d theta_i ~ (f(theta_i + h) - f(theta_i - h)) / 2h
with h = 1e-4 in double precision. Errors are reported relative to the
gradient's own scale: max_i |a_i - n_i| / max(||a||_inf, ||n||_inf, 1e-8),
which stays meaningful when individual components vanish.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from .model import Model, ModelConfig

DEFAULT_H = 1e-4
DOUBLE_TOL = 1e-5
SINGLE_TOL = 1e-2


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_gradient(f, x: np.ndarray, h: float = DEFAULT_H) -> np.ndarray:
    """Central differences of a scalar-valued f at every coordinate of x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def _scalarize(out_value: np.ndarray, probe: np.ndarray) -> float:
    # fixed random projection turns any op output into a scalar objective
    return float((out_value * probe).sum())


def check_op(name, build, inputs, rng, h=DEFAULT_H):
    """FD-check one op. `build` maps DiffTensors -> DiffTensor output.

    Returns the worst relative error over all differentiable inputs.
    """
    tensors = [ad.DiffTensor(np.asarray(v, dtype=np.float64)) for v in inputs]
    out = build(*tensors)
    probe = rng.standard_normal(out.shape)
    out.backprop(probe)

    worst = 0.0
    for j, t in enumerate(tensors):
        def f(xj, j=j):
            vals = [t2.value for t2 in tensors]
            vals[j] = xj
            fresh = [ad.DiffTensor(v) for v in vals]
            return _scalarize(build(*fresh).value, probe)

        numeric = numeric_gradient(f, tensors[j].value.copy(), h)
        worst = max(worst, relative_error(t.grad, numeric))
    return worst


def _check_conv(rng):
    x = rng.standard_normal((2, 3, 4, 4, 4))
    w = rng.standard_normal((2, 3, 3, 3, 3))
    b = rng.standard_normal(2)
    return check_op("conv3d", lambda x_, w_, b_: ad.conv3d(x_, w_, b_, padding=1),
                    (x, w, b), rng)


def _check_maxpool(rng):
    # distinct values with gaps >> 2h keep the argmax stable under FD steps
    n = 2 * 2 * 4 * 4 * 4
    x = rng.permutation(np.linspace(-1.0, 1.0, n)).reshape(2, 2, 4, 4, 4)
    return check_op("maxpool3d", lambda x_: ad.maxpool3d(x_, 2), (x,), rng)


def _check_upsample(rng):
    x = rng.standard_normal((2, 2, 3, 3, 3))
    return check_op("upsample3d", lambda x_: ad.upsample3d(x_, 2), (x,), rng)


def _check_batchstat(rng):
    x = rng.standard_normal((2, 3, 3, 3, 3))
    gamma = 0.5 + rng.random(3)
    beta = rng.standard_normal(3)
    return check_op("batchstat_norm", ad.batchstat_norm, (x, gamma, beta), rng)


def _check_prelu(rng):
    # keep points off the kink at 0 so central differences stay one-sided
    x = rng.standard_normal((2, 3, 3, 3, 3))
    x += np.where(x >= 0, 0.05, -0.05)
    a = 0.1 + rng.random(3)
    return check_op("prelu", ad.prelu, (x, a), rng)


def _check_softmax(rng):
    x = rng.standard_normal((2, 4, 3, 3, 3))
    return check_op("softmax_channels", ad.softmax_channels, (x,), rng)


def _check_concat(rng):
    xs = [rng.standard_normal((1, c, 2, 2, 2)) for c in (2, 3)]
    return check_op("concat_channels",
                    lambda a, b: ad.concat_channels([a, b]), xs, rng)


def _loss_pair(rng, shape=(1, 4, 3, 3, 3)):
    logits = rng.standard_normal(shape)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    pred = e / e.sum(axis=1, keepdims=True)
    # blend toward uniform: the focal loss's third derivative blows up as
    # p_t -> 0, which would turn the FD check into a truncation-error check
    pred = 0.6 * pred + 0.4 / shape[1]
    classes = rng.integers(shape[1], size=(shape[0],) + shape[2:])
    truth = np.zeros(shape)
    np.put_along_axis(truth, classes[:, None], 1.0, axis=1)
    return pred, truth


def _check_loss(kind, rng):
    pred, truth = _loss_pair(rng)
    cfg = losses.LossConfig()
    fns = {
        "soft_dice_loss": lambda p: losses.soft_dice_loss(p, truth),
        "focal_loss": lambda p: losses.focal_loss(p, truth, cfg),
        "combined_loss": lambda p: losses.combined_loss(p, truth, cfg),
    }
    fn = fns[kind]
    _, analytic = fn(pred)
    numeric = numeric_gradient(lambda p: fn(p)[0], pred.copy())
    return relative_error(analytic, numeric)


def _check_model(rng, n_coords=8):
    """FD over sampled parameter coordinates of a miniature full network.

    The patch must be 16^3: three pooling stages leave a 2^3 bottleneck,
    the smallest grid with defined batch statistics.

    The composition has kinks (PReLU corners, pooling argmax ties); when a
    random activation happens to sit on one, every central difference is a
    secant across it and FD says nothing about the backward pass. Such
    coordinates are detected by comparing the h and h/2 estimates (they
    disagree far beyond smooth truncation) and skipped; a wrong analytic
    gradient at a smooth point still fails, because there the two FD
    estimates agree with each other and not with it.
    """
    cfg = ModelConfig(widths=(2, 3, 4), bottleneck_width=5, classes=3,
                      dense_units_per_module=1, patch_size=16,
                      seed=int(rng.integers(2 ** 31)))
    model = Model(cfg, dtype=np.float64)
    x = rng.standard_normal((1, 4, 16, 16, 16))
    probe = rng.standard_normal((1, cfg.classes, 16, 16, 16))

    out = model.forward(x)
    model.zero_grad()
    out.backprop(probe)

    def numeric_at(flat, i, orig, h):
        flat[i] = orig + h
        fp = _scalarize(model.forward(x).value, probe)
        flat[i] = orig - h
        fm = _scalarize(model.forward(x).value, probe)
        flat[i] = orig
        return (fp - fm) / (2.0 * h)

    names = sorted(model.parameters)
    worst = 0.0
    h = 1e-5
    checked = 0
    attempts = 0
    while checked < n_coords and attempts < 4 * n_coords:
        attempts += 1
        pname = names[int(rng.integers(len(names)))]
        p = model.parameters[pname]
        i = int(rng.integers(p.value.size))
        flat = p.value.reshape(-1)
        orig = flat[i]
        analytic = float(p.grad.reshape(-1)[i])
        scale = max(abs(analytic), np.abs(p.grad).max(), 1e-8)
        n_full = numeric_at(flat, i, orig, h)
        n_half = numeric_at(flat, i, orig, h / 2.0)
        if abs(n_full - n_half) > 1e-6 * scale:
            continue  # locally non-smooth: FD is meaningless here
        worst = max(worst, abs(analytic - n_half) / scale)
        checked += 1
    if checked == 0:
        raise AssertionError("no smooth coordinates found for model FD check")
    return worst


ALL_CHECKS = (
    "conv3d", "maxpool3d", "upsample3d", "batchstat_norm", "prelu",
    "softmax_channels", "concat_channels", "soft_dice_loss", "focal_loss",
    "combined_loss", "full_model",
)


def run_suite(seeds=range(20), tolerance=DOUBLE_TOL):
    """Run every FD check over the given seeds; returns (results, elapsed_s)."""
    runners = {
        "conv3d": _check_conv,
        "maxpool3d": _check_maxpool,
        "upsample3d": _check_upsample,
        "batchstat_norm": _check_batchstat,
        "prelu": _check_prelu,
        "softmax_channels": _check_softmax,
        "concat_channels": _check_concat,
        "soft_dice_loss": lambda r: _check_loss("soft_dice_loss", r),
        "focal_loss": lambda r: _check_loss("focal_loss", r),
        "combined_loss": lambda r: _check_loss("combined_loss", r),
        "full_model": _check_model,
    }
    t0 = time.perf_counter()
    results = []
    for name in ALL_CHECKS:
        worst = 0.0
        for seed in seeds:
            rng = np.random.default_rng(zlib.crc32(name.encode()) ^ seed)
            worst = max(worst, runners[name](rng))
        results.append(CheckResult(name, worst, tolerance))
    return results, time.perf_counter() - t0
