"""Single-image deraining with a two-branch residual cascade."""

from .derainnet import BranchConfig, DerainModel, derain_image, init_model, model_forward
from .estimator import DerainRegressor, RainSynthesizer
from .imageio import load_checkpoint, read_image, save_checkpoint, write_image
from .metrics import SsimParams, mse_image, psnr, ssim
from .rainmodel import RainConfig, SyntheticPair, synthesize
from .tensorcore import ContractViolation, Precision, Tensor
from .trainer import TrainConfig, train

__all__ = [
    "BranchConfig",
    "ContractViolation",
    "DerainModel",
    "DerainRegressor",
    "Precision",
    "RainConfig",
    "RainSynthesizer",
    "SsimParams",
    "SyntheticPair",
    "Tensor",
    "TrainConfig",
    "derain_image",
    "init_model",
    "load_checkpoint",
    "model_forward",
    "mse_image",
    "psnr",
    "read_image",
    "save_checkpoint",
    "ssim",
    "synthesize",
    "train",
    "write_image",
]
__version__ = "0.1.0"
