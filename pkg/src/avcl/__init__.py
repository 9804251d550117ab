"""Self-supervised audio-visual contrastive learning at desk scale.

A from-scratch float64 autodiff tensor, an audio front end producing
256x256 mel spectrograms, paired independent encoders with gated fusion,
correlation-alignment and dual contrastive objectives, and a momentum-SGD
trainer with a linear-probe evaluator and ablation harness.
"""

from .audio import MelSpectrogram, StftParams, Waveform, process, read_wav
from .data import DatasetSplit, PairedSample, SyntheticSpec, generate, load_corpus
from .errors import AvclError
from .losses import (LossConfig, cgra_loss, cross_correlation, selfcl_loss_a,
                     selfcl_loss_v, selfcl_total, total_loss)
from .model import AmfmParams, EncoderParams, ModelState, amfm_forward, encode, init_model
from .tensor import Tensor, concat, grad_check, load_tensor, save_tensor
from .train import SGD, MetricsRecord, TrainConfig, ablate, linear_probe, pretrain

__version__ = "0.1.0"

__all__ = [
    "AmfmParams", "AvclError", "DatasetSplit", "EncoderParams", "LossConfig",
    "MelSpectrogram", "MetricsRecord", "ModelState", "PairedSample", "SGD",
    "StftParams", "SyntheticSpec", "Tensor", "TrainConfig", "Waveform",
    "ablate", "amfm_forward", "cgra_loss", "concat", "cross_correlation",
    "encode", "generate", "grad_check", "init_model", "linear_probe",
    "load_corpus", "load_tensor", "pretrain", "process", "read_wav",
    "save_tensor", "selfcl_loss_a", "selfcl_loss_v", "selfcl_total", "total_loss",
]
