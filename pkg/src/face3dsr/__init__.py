"""Face super-resolution guided by 3D morphable-model priors.

The package is self-contained on numpy: a small reverse-mode autodiff engine
(:mod:`face3dsr.tensor`), a synthetic morphable face model and differentiable
rasterizer, the coefficient regressor and prior-conditioned SR network, and
the training loops and command line around them.
"""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig
from .data import DataError, SyntheticFaceDataset
from .metrics import psnr, ssim
from .morphable import FaceBasis, FaceCoefficients, generate_basis
from .networks import CoefficientRegressor, SAMNet, SamConfig
from .raster import Camera, render
from .train import super_resolve, train_render, train_sr

__version__ = "0.1.0"

__all__ = [
    "Camera", "Checkpoint", "CoefficientRegressor", "ConfigError", "DataError", "FaceBasis", "FaceCoefficients",
    "SAMNet", "SamConfig", "SyntheticFaceDataset", "TrainConfig", "generate_basis", "load_checkpoint", "psnr",
    "render", "save_checkpoint", "ssim", "super_resolve", "train_render", "train_sr",
]
