"""Multi-stage U-shaped denoiser with differentiable NMF (MD) blocks."""

from ._validation import ConfigurationError, InputError, NonFiniteError
from .data import NoiseCase, builtin_image_set
from .estimator import SUMDDenoiser
from .md import MDConfig, MDModule
from .metrics import psnr, ssim
from .multistage import SUMD, SUMDConfig
from .network import HUS, StageConfig
from .nmf import MultiplicativeNMF, NMFConfig, nmf_reconstruct, one_step_grad_boundary
from .training import TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "InputError", "NonFiniteError",
    "NoiseCase", "builtin_image_set",
    "SUMDDenoiser",
    "MDConfig", "MDModule",
    "psnr", "ssim",
    "SUMD", "SUMDConfig",
    "HUS", "StageConfig",
    "MultiplicativeNMF", "NMFConfig", "nmf_reconstruct", "one_step_grad_boundary",
    "TrainConfig", "Trainer",
]
