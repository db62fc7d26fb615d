"""Training losses and evaluation metrics for image-to-image regression.

The composite training loss is ``weight * MAE + DSSIM`` where
``DSSIM = (1 - SSIM) / 2``. SSIM follows the standard windowed form: an
11x11 Gaussian window (sigma 1.5) slides over valid positions only, and
the stabilizers are ``C1 = (0.01 L)^2`` and ``C2 = (0.03 L)^2`` for
dynamic range ``L``. ``L`` comes from the training targets and travels
with the model checkpoint so evaluation reuses the same constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, correlate2d

__all__ = [
    "SsimConfig",
    "LossConfig",
    "gaussian_window",
    "mae",
    "ssim",
    "dssim",
    "composite_loss",
    "MetricSummary",
    "EvalReport",
    "evaluate",
    "MAPE_FLOOR",
]

MAPE_FLOOR = 1e-6


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    sigma: float = 1.5
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be a positive odd integer")
        if self.sigma <= 0 or self.dynamic_range <= 0:
            raise ValueError("sigma and dynamic_range must be positive")

    @property
    def c1(self):
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self):
        return (self.k2 * self.dynamic_range) ** 2


@dataclass(frozen=True)
class LossConfig:
    weight: float = 0.01
    use_mae: bool = True
    use_dssim: bool = True

    def __post_init__(self):
        if not (self.use_mae or self.use_dssim):
            raise ValueError("at least one loss term must be enabled")
        if self.use_mae and self.weight <= 0:
            raise ValueError("MAE weight must be positive")


def gaussian_window(size=11, sigma=1.5):
    """Normalized 2-D Gaussian window over integer offsets from the center."""
    if size < 1 or size % 2 == 0:
        raise ValueError("window size must be a positive odd integer")
    offsets = np.arange(size) - size // 2
    g = np.exp(-(offsets.astype(np.float64) ** 2) / (2.0 * sigma * sigma))
    window = np.outer(g, g)
    return window / window.sum()


def mae(pred, target):
    """Mean absolute error as a scalar tensor."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return (pred - target).abs().mean()


def ssim(x, y, cfg):
    """Mean windowed structural similarity between two images.

    Inputs are ``[C, H, W]`` tensors compared channel by channel; local
    means, variances, and covariance come from Gaussian-weighted windows
    at valid positions only (no padding).
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 3:
        raise ValueError("ssim expects [C, H, W] tensors")
    if x.shape[1] < cfg.window_size or x.shape[2] < cfg.window_size:
        raise ValueError(
            f"image {x.shape[1:]} smaller than {cfg.window_size}x"
            f"{cfg.window_size} window"
        )
    window = gaussian_window(cfg.window_size, cfg.sigma)
    mx = correlate2d(x, window)
    my = correlate2d(y, window)
    vx = correlate2d(x * x, window) - mx * mx
    vy = correlate2d(y * y, window) - my * my
    cxy = correlate2d(x * y, window) - mx * my
    c1, c2 = cfg.c1, cfg.c2
    num = (2.0 * (mx * my) + c1) * (2.0 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return (num / den).mean()


def dssim(x, y, cfg):
    """Structural dissimilarity ``(1 - SSIM) / 2``, bounded in [0, 1]."""
    return (1.0 - ssim(x, y, cfg)) * 0.5


def composite_loss(pred, target, loss_cfg, ssim_cfg):
    """Weighted MAE plus DSSIM, with either term optional."""
    total = None
    if loss_cfg.use_mae:
        total = mae(pred, target) * loss_cfg.weight
    if loss_cfg.use_dssim:
        term = dssim(pred, target, ssim_cfg)
        total = term if total is None else total + term
    return total


@dataclass
class MetricSummary:
    mean: float
    std: float
    per_image: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mean": self.mean,
            "std": self.std,
            "per_image": list(self.per_image),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["mean"]), float(d["std"]), list(d["per_image"]))


@dataclass
class EvalReport:
    rmse: MetricSummary
    mape: MetricSummary
    ssim: MetricSummary
    n_images: int

    def to_dict(self):
        return {
            "n_images": self.n_images,
            "rmse": self.rmse.to_dict(),
            "mape": self.mape.to_dict(),
            "ssim": self.ssim.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            rmse=MetricSummary.from_dict(d["rmse"]),
            mape=MetricSummary.from_dict(d["mape"]),
            ssim=MetricSummary.from_dict(d["ssim"]),
            n_images=int(d["n_images"]),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _as_array(image):
    return image.data if isinstance(image, Tensor) else np.asarray(image, np.float64)


def _summary(values):
    arr = np.asarray(values, dtype=np.float64)
    return MetricSummary(float(arr.mean()), float(arr.std()), arr.tolist())


def evaluate(preds, targets, ssim_cfg, mape_floor=MAPE_FLOOR):
    """Per-image RMSE, MAPE (%), and SSIM with mean/std across images.

    MAPE divides by ``max(|target|, mape_floor)`` per pixel so
    near-zero targets cannot blow up the score.
    """
    if len(preds) != len(targets):
        raise ValueError("prediction and target counts differ")
    if not preds:
        raise ValueError("evaluate needs at least one image pair")
    rmses, mapes, ssims = [], [], []
    for p, t in zip(preds, targets):
        pa, ta = _as_array(p), _as_array(t)
        if pa.shape != ta.shape:
            raise ValueError(f"shape mismatch {pa.shape} vs {ta.shape}")
        diff = pa - ta
        rmses.append(float(np.sqrt(np.mean(diff * diff))))
        denom = np.maximum(np.abs(ta), mape_floor)
        mapes.append(float(100.0 * np.mean(np.abs(diff) / denom)))
        ssims.append(float(ssim(Tensor(pa), Tensor(ta), ssim_cfg).item()))
    return EvalReport(
        rmse=_summary(rmses),
        mape=_summary(mapes),
        ssim=_summary(ssims),
        n_images=len(rmses),
    )
