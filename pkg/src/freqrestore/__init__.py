"""Frequency-aware all-in-one image restoration on numpy."""

from .degrade import DegradationSpec, ImagePair, apply, parse_task, synth_clean
from .dformer import Dformer, DformerConfig
from .errors import ConfigError, ContractError, DimensionError, NumericError, SymmetryError
from .metrics import psnr, ssim
from .rformer import Rformer, RformerConfig
from .spectral import band_filter, decompose, dft2d, idft2d
from .tensor import Tensor, grad_check, no_grad
from .train import NegativeQueue, TrainConfig, evaluate, info_nce, l1_loss

__version__ = "0.1.0"
