"""Three-level dense encoder-decoder network, Adam training, checkpoints.

Each dense module chains conv-norm-PReLU units where unit i consumes the
channel concatenation of the module input and every earlier unit's output,
then a 1x1x1 convolution projects the collected maps back to the level
width. Downsampling is 2^3 max-pooling; the decoder upsamples by nearest
neighbor, refines with a 3^3 convolution, and concatenates the peer encoder
output before its own dense module. A 1x1x1 head plus channel softmax emits
one probability per class per voxel.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .losses import LossConfig, combined_loss, one_hot_labels


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    levels: int = 3
    widths: tuple = (64, 128, 256)
    bottleneck_width: int = 512
    classes: int = 4
    dense_units_per_module: int = 2
    kernel: int = 3
    patch_size: int = 64
    in_channels: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != self.levels:
            raise ModelError(f"need {self.levels} widths, got {self.widths}")
        if any(a >= b for a, b in zip(self.widths, self.widths[1:])):
            raise ModelError(f"widths must be ascending, got {self.widths}")
        if self.classes < 2:
            raise ModelError("classes must be >= 2")
        if self.kernel % 2 == 0:
            raise ModelError("kernel must be odd to preserve shape")
        if self.dense_units_per_module < 1:
            raise ModelError("dense_units_per_module must be >= 1")
        if self.patch_size % (2 ** self.levels) != 0:
            raise ModelError(
                f"patch size {self.patch_size} not divisible by {2 ** self.levels}"
            )


class Model:
    """Parameter registry plus the forward pass wiring them together."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.parameters: dict = {}
        rng = np.random.default_rng(cfg.seed)

        def conv_init(name, out_c, in_c, k, bias=True):
            fan_in = in_c * k ** 3
            std = np.sqrt(2.0 / fan_in)
            w = rng.standard_normal((out_c, in_c, k, k, k)) * std
            self.parameters[f"{name}.w"] = ad.parameter(w, dtype)
            if bias:
                self.parameters[f"{name}.b"] = ad.parameter(np.zeros(out_c), dtype)

        def dense_init(name, in_c, width):
            k = cfg.kernel
            c = in_c
            for u in range(cfg.dense_units_per_module):
                # unit convs feed a normalization, so a bias would be inert
                conv_init(f"{name}.unit{u}.conv", width, c, k, bias=False)
                self.parameters[f"{name}.unit{u}.gamma"] = ad.parameter(np.ones(width), dtype)
                self.parameters[f"{name}.unit{u}.beta"] = ad.parameter(np.zeros(width), dtype)
                self.parameters[f"{name}.unit{u}.slope"] = ad.parameter(np.full(width, 0.25), dtype)
                c += width
            conv_init(f"{name}.project", width, c, 1)

        widths = cfg.widths
        c = cfg.in_channels
        for i, w in enumerate(widths):
            dense_init(f"enc{i}", c, w)
            c = w
        dense_init("bottleneck", widths[-1], cfg.bottleneck_width)

        c = cfg.bottleneck_width
        for i in reversed(range(cfg.levels)):
            conv_init(f"up{i}.conv", widths[i], c, cfg.kernel)
            dense_init(f"dec{i}", 2 * widths[i], widths[i])
            c = widths[i]
        conv_init("head", cfg.classes, widths[0], 1)

    # -- forward ------------------------------------------------------------

    def _conv(self, name, x, k=None):
        k = self.cfg.kernel if k is None else k
        return ad.conv3d(x, self.parameters[f"{name}.w"],
                         self.parameters.get(f"{name}.b"), padding=(k - 1) // 2)

    def _dense(self, name, x):
        feeds = [x]
        for u in range(self.cfg.dense_units_per_module):
            h = feeds[0] if len(feeds) == 1 else ad.concat_channels(feeds)
            h = self._conv(f"{name}.unit{u}.conv", h)
            h = ad.batchstat_norm(h, self.parameters[f"{name}.unit{u}.gamma"],
                                  self.parameters[f"{name}.unit{u}.beta"])
            h = ad.prelu(h, self.parameters[f"{name}.unit{u}.slope"])
            feeds.append(h)
        return self._conv(f"{name}.project", ad.concat_channels(feeds), k=1)

    def forward(self, x, trace: dict | None = None) -> ad.DiffTensor:
        """(B, 4, p, p, p) array -> (B, classes, p, p, p) softmax DiffTensor."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 5 or x.shape[1] != self.cfg.in_channels:
            raise ModelError(f"expected (B, {self.cfg.in_channels}, d, h, w) input, "
                             f"got {x.shape}")
        if any(s % (2 ** self.cfg.levels) for s in x.shape[2:]):
            raise ModelError(f"spatial dims {x.shape[2:]} not divisible by "
                             f"{2 ** self.cfg.levels}")
        h = ad.DiffTensor(x)
        skips = []
        for i in range(self.cfg.levels):
            h = self._dense(f"enc{i}", h)
            skips.append(h)
            if trace is not None:
                trace[f"enc{i}"] = h
            h = ad.maxpool3d(h, 2)
        h = self._dense("bottleneck", h)
        if trace is not None:
            trace["bottleneck"] = h
        for i in reversed(range(self.cfg.levels)):
            h = self._conv(f"up{i}.conv", ad.upsample3d(h, 2))
            h = self._dense(f"dec{i}", ad.concat_channels([h, skips[i]]))
            if trace is not None:
                trace[f"dec{i}"] = h
        out = ad.softmax_channels(self._conv("head", h, k=1))
        if trace is not None:
            trace["out"] = out
        return out

    def predict_patch(self, patch: np.ndarray) -> np.ndarray:
        """(4, p, p, p) -> (classes, p, p, p) probabilities, no gradient kept."""
        return self.forward(patch[None]).value[0]

    def zero_grad(self):
        for p in self.parameters.values():
            p.zero_grad()


# -- optimization -----------------------------------------------------------

@dataclass
class Adam:
    """Standard Adam over a model's parameter registry."""

    model: Model
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    _m: dict = field(default_factory=dict)
    _v: dict = field(default_factory=dict)

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.model.parameters.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.value)
                v = np.zeros_like(p.value)
            else:
                v = self._v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            p.value -= (self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)).astype(p.value.dtype)


def train_step(model: Model, patch_data: np.ndarray, label_cube: np.ndarray,
               optimizer: Adam, loss_cfg: LossConfig = LossConfig()) -> float:
    """One forward/backward/update on a single patch; returns the loss."""
    x = np.asarray(patch_data, dtype=model.dtype)[None]
    truth = one_hot_labels(label_cube, dtype=np.float64)
    out = model.forward(x)
    loss, grad = combined_loss(out.value, truth, loss_cfg)
    if not np.isfinite(loss):
        raise ModelError(f"non-finite loss {loss}: pred range "
                         f"[{out.value.min()}, {out.value.max()}]")
    model.zero_grad()
    out.backprop(grad.astype(model.dtype))
    optimizer.step()
    return loss


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_FORMAT = "tumorseg-checkpoint-v1"


def save_checkpoint(model: Model, path) -> None:
    """JSON header line (config, tensor manifest, SHA-256) + float32 payload."""
    manifest = []
    chunks = []
    for name, p in model.parameters.items():
        arr = np.ascontiguousarray(p.value, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    payload = b"".join(chunks)
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.cfg),
        "manifest": manifest,
        "digest": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        f.write(payload)


def load_checkpoint(path, dtype=np.float32) -> Model:
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ModelError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
        cfg_dict = dict(header["config"])
        manifest = header["manifest"]
        digest = header["digest"]
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ModelError(f"{path}: malformed checkpoint header ({exc})") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ModelError(f"{path}: unknown checkpoint format {header.get('format')}")

    payload = raw[nl + 1:]
    if hashlib.sha256(payload).hexdigest() != digest:
        raise ModelError(f"{path}: corrupt checkpoint (digest mismatch)")

    cfg_dict["widths"] = tuple(cfg_dict["widths"])
    model = Model(ModelConfig(**cfg_dict), dtype=dtype)
    expected = list(model.parameters)
    names = [entry["name"] for entry in manifest]
    if names != expected:
        raise ModelError(f"{path}: manifest does not match config-derived "
                         f"parameter set")
    offset = 0
    for entry in manifest:
        p = model.parameters[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != p.value.shape:
            raise ModelError(f"{path}: tensor {entry['name']} shape {shape} "
                             f"conflicts with config {p.value.shape}")
        nbytes = int(np.prod(shape)) * 4
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ModelError(f"{path}: truncated checkpoint payload")
        p.value = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(dtype)
        offset += nbytes
    if offset != len(payload):
        raise ModelError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return model
