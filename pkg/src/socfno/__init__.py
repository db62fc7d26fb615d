"""Framework-free spectral neural operators for raster regression.

The package trains densely connected Fourier neural operators (and a
plain variant) to map six-band surface reflectance rasters to soil
organic carbon maps, with a pixelwise random-forest baseline for
comparison. Everything numerical is built on numpy arrays plus a small
reverse-mode differentiation engine in :mod:`socfno.tensor`.
"""

from .data import (
    AugmentConfig,
    DatasetManifest,
    RasterSample,
    augment,
    load_dataset,
    save_dataset,
    synth_generate,
)
from .forest import Forest, ForestConfig, fit_forest, predict_forest
from .layers import FourierLayer, SpectralWeights, instance_norm, mode_mask, spectral_conv
from .losses import EvalReport, LossConfig, SsimConfig, composite_loss, evaluate, mae, ssim
from .models import Model, ModelConfig, build_model, count_params, load_checkpoint, save_checkpoint
from .optim import Adamax, CosineSchedule, cosine_lr
from .tensor import ComplexTensor, NumericalError, Tensor, grad_check

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "DatasetManifest",
    "RasterSample",
    "augment",
    "load_dataset",
    "save_dataset",
    "synth_generate",
    "Forest",
    "ForestConfig",
    "fit_forest",
    "predict_forest",
    "FourierLayer",
    "SpectralWeights",
    "instance_norm",
    "mode_mask",
    "spectral_conv",
    "EvalReport",
    "LossConfig",
    "SsimConfig",
    "composite_loss",
    "evaluate",
    "mae",
    "ssim",
    "Model",
    "ModelConfig",
    "build_model",
    "count_params",
    "load_checkpoint",
    "save_checkpoint",
    "Adamax",
    "CosineSchedule",
    "cosine_lr",
    "ComplexTensor",
    "NumericalError",
    "Tensor",
    "grad_check",
    "__version__",
]
