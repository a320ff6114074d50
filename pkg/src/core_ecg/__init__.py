"""Joint masked-reconstruction and contrastive pretraining for 12-lead ECG.

Everything runs on NumPy through the small reverse-mode engine in
:mod:`core_ecg.autodiff`. The mask sampler and the FDA noise-scale kernel
have a compiled implementation with a pure-Python fallback; see
:data:`core_ecg.BACKEND`.
"""

from ._kernels import BACKEND
from .fda import FrequencyImportance, NoiseScale, augment, augment_signal, noise_scale
from .model import CoReECG, ModelConfig
from .objectives import infonce_loss, metrics, reconstruction_loss
from .stdm import MaskPlan, sample_mask, uniform_random_mask
from .trainer import TrainConfig, finetune, pretrain

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "FrequencyImportance", "NoiseScale", "augment", "augment_signal", "noise_scale",
    "CoReECG", "ModelConfig", "MaskPlan", "sample_mask", "uniform_random_mask",
    "reconstruction_loss", "infonce_loss", "metrics", "TrainConfig", "pretrain", "finetune",
]
