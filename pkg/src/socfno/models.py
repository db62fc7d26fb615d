"""Neural operator assembly, parameter counting, and checkpoints.

Two presets exist. The densely connected variant lifts the input to a
narrow width and feeds every layer the channel concatenation of the
lifted input and all previous layer outputs, so layer ``t`` consumes
``hidden * t`` channels and emits ``hidden``; the projection reads the
final concatenation. The plain variant chains equal-width layers. Both
end in a pointwise linear projection to the output channels.

Checkpoints are a single file: a JSON manifest line describing config,
parameter order, shapes, and user extras, then raw little-endian 32-bit
blobs (complex parameters store interleaved re/im pairs). Parameters are
quantized to 32 bits exactly once at save time, so saving a loaded model
reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .layers import ACTIVATIONS, NORMS, FourierLayer
from .tensor import Tensor, channel_linear, concat_channels

__all__ = [
    "ModelConfig",
    "Model",
    "build_model",
    "count_params",
    "assign_param",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT",
]

CHECKPOINT_FORMAT = "socfno-checkpoint"


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 6
    out_channels: int = 1
    hidden_channels: int = 24
    n_layers: int = 4
    n_modes: int = 8
    dense: bool = True
    shared_r: bool = True
    norm: str = "instance"
    activation: str = "relu"
    full_grid: bool = False
    grid: tuple = None
    # Optional fixed affine on the output (never trained); lets a caller
    # bake target units into the head.
    out_offset: float = 0.0
    out_scale: float = 1.0

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "hidden_channels",
                     "n_layers", "n_modes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (math.isfinite(self.out_offset) and math.isfinite(self.out_scale)
                and self.out_scale > 0.0):
            raise ValueError("output calibration must be finite with scale > 0")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm '{self.norm}'")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        if self.full_grid:
            if self.shared_r:
                raise ValueError("full-grid weights require per-mode form")
            if self.grid is None:
                raise ValueError("full-grid weights need a grid shape")
            object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        elif self.grid is not None:
            raise ValueError("grid is only meaningful with full_grid")

    @classmethod
    def fno(cls, **overrides):
        """Plain FNO preset: 32 channels, per-mode weights, no concatenation."""
        base = dict(hidden_channels=32, dense=False, shared_r=False)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def fno_densenet(cls, **overrides):
        """Dense preset: 24 channels, shared spectral weights, concatenation."""
        base = dict(hidden_channels=24, dense=True, shared_r=True)
        base.update(overrides)
        return cls(**base)

    def layer_in_channels(self, index):
        """Input width of layer ``index`` (0-based)."""
        if self.dense:
            return self.hidden_channels * (index + 1)
        return self.hidden_channels

    @property
    def projection_in_channels(self):
        if self.dense:
            return self.hidden_channels * (self.n_layers + 1)
        return self.hidden_channels

    def _spectral_entries(self, cin, cout):
        if self.full_grid:
            h, w = self.grid
            return h * (w // 2 + 1) * cout * cin
        if self.shared_r:
            return cout * cin
        return 2 * self.n_modes * self.n_modes * cout * cin

    def param_count(self, spectral_only=False):
        """Closed-form scalar parameter count (complex entries count twice)."""
        hidden = self.hidden_channels
        total = 0
        spectral = 0
        for t in range(self.n_layers):
            cin = self.layer_in_channels(t)
            spectral += 2 * self._spectral_entries(cin, hidden)
            total += hidden * cin + hidden
        if spectral_only:
            return spectral
        total += spectral
        total += self.in_channels * hidden + hidden
        total += self.projection_in_channels * self.out_channels + self.out_channels
        return total

    def to_dict(self):
        d = asdict(self)
        d["grid"] = None if self.grid is None else list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("grid") is not None:
            d["grid"] = tuple(d["grid"])
        return cls(**d)


class Model:
    """Lifting, a stack of Fourier layers, and a linear projection."""

    def __init__(self, cfg, lift_w, lift_b, layers, proj_w, proj_b):
        self.cfg = cfg
        self.lift_w = lift_w
        self.lift_b = lift_b
        self.layers = layers
        self.proj_w = proj_w
        self.proj_b = proj_b

    def forward(self, x):
        cfg = self.cfg
        if x.ndim != 3 or x.shape[0] != cfg.in_channels:
            raise ValueError(
                f"expected [{cfg.in_channels}, H, W] input, got {x.shape}"
            )
        _, h, w = x.shape
        if not cfg.shared_r and not cfg.full_grid:
            if 2 * cfg.n_modes > h or cfg.n_modes > w // 2 + 1:
                raise ValueError(
                    f"grid {h}x{w} too small for N={cfg.n_modes} per-mode weights"
                )
        hidden = cfg.hidden_channels
        v = channel_linear(x, self.lift_w) + self.lift_b.reshape((hidden, 1, 1))
        if cfg.dense:
            feats = [v]
            for layer in self.layers:
                feats.append(layer(concat_channels(feats) if len(feats) > 1
                                   else feats[0]))
            v = concat_channels(feats)
        else:
            for layer in self.layers:
                v = layer(v)
        out = channel_linear(v, self.proj_w)
        out = out + self.proj_b.reshape((cfg.out_channels, 1, 1))
        if cfg.out_scale != 1.0 or cfg.out_offset != 0.0:
            # Fixed output calibration; constants, so no gradient flows to it.
            out = out * cfg.out_scale + cfg.out_offset
        return out

    __call__ = forward

    def params(self):
        """Stable name-to-tensor map: lift, layer0..layerK, proj."""
        named = {"lift.w": self.lift_w, "lift.b": self.lift_b}
        for i, layer in enumerate(self.layers):
            for key, tensor in layer.params().items():
                named[f"layer{i}.{key}"] = tensor
        named["proj.w"] = self.proj_w
        named["proj.b"] = self.proj_b
        return named


def build_model(cfg, seed=0):
    """Construct a model with seed-reproducible initialization."""
    rng = np.random.default_rng(seed)
    hidden = cfg.hidden_channels
    bound = np.sqrt(6.0 / cfg.in_channels)
    lift_w = Tensor(
        rng.uniform(-bound, bound, (hidden, cfg.in_channels)), requires_grad=True
    )
    lift_b = Tensor(np.zeros(hidden), requires_grad=True)
    layers = []
    for t in range(cfg.n_layers):
        layers.append(
            FourierLayer(
                cfg.layer_in_channels(t),
                hidden,
                cfg.n_modes,
                rng,
                shared_r=cfg.shared_r,
                norm=cfg.norm,
                activation=cfg.activation,
                full_grid_shape=cfg.grid if cfg.full_grid else None,
            )
        )
    pin = cfg.projection_in_channels
    pbound = np.sqrt(6.0 / pin)
    proj_w = Tensor(
        rng.uniform(-pbound, pbound, (cfg.out_channels, pin)), requires_grad=True
    )
    proj_b = Tensor(np.zeros(cfg.out_channels), requires_grad=True)
    return Model(cfg, lift_w, lift_b, layers, proj_w, proj_b)


def count_params(model):
    """Scalar parameter count of an instantiated model."""
    total = 0
    for p in model.params().values():
        total += p.data.size * (2 if np.iscomplexobj(p.data) else 1)
    return total


def assign_param(tensor, values):
    """Rebind a parameter tensor's value in place (checkpoint load, tests)."""
    arr = np.array(values, dtype=tensor.data.dtype, order="C", copy=True)
    if arr.shape != tensor.data.shape:
        raise ValueError(f"shape mismatch {arr.shape} vs {tensor.data.shape}")
    arr.flags.writeable = False
    tensor.data = arr
    tensor.grad = None


def save_checkpoint(model, path, extra=None):
    """Write config plus float32-quantized parameters to ``path``."""
    params = model.params()
    entries = []
    blobs = []
    for name, p in params.items():
        complex_ = np.iscomplexobj(p.data)
        dtype = "<c8" if complex_ else "<f4"
        blobs.append(np.ascontiguousarray(p.data.astype(dtype)).tobytes())
        entries.append({"name": name, "shape": list(p.shape), "dtype": dtype})
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "config": model.cfg.to_dict(),
        "params": entries,
        "extra": {} if extra is None else extra,
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Rebuild a model from ``path``; returns ``(model, extra)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    split = raw.find(b"\n")
    if split < 0:
        raise ValueError(f"{path}: missing checkpoint manifest line")
    manifest = json.loads(raw[:split].decode("utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    model = build_model(ModelConfig.from_dict(manifest["config"]), seed=0)
    params = model.params()
    offset = split + 1
    for entry in manifest["params"]:
        name, shape, dtype = entry["name"], tuple(entry["shape"]), entry["dtype"]
        if name not in params:
            raise ValueError(f"{path}: unknown parameter '{name}'")
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(
                f"{path}: truncated blob for '{name}' "
                f"(need {nbytes} bytes, have {len(chunk)})"
            )
        values = np.frombuffer(chunk, dtype=dtype).reshape(shape)
        wide = values.astype(
            np.complex128 if dtype == "<c8" else np.float64
        )
        assign_param(params[name], wide)
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, manifest.get("extra", {})
