"""AcousticSSM: frequency-only residual CNN + diagonal state-space layers for
self-supervised few-shot audio classification."""

from acoustic_ssm.audio import Waveform, crop_or_pad, load_wav, resample, save_wav
from acoustic_ssm.features import FeatureConfig, stack_channels
from acoustic_ssm.embedder import AcousticSSM, EmbedderConfig
from acoustic_ssm.contrastive import ProjectionHead, contrastive_loss
from acoustic_ssm.fewshot import ClassifierHead, build_episode, evaluate, finetune
from acoustic_ssm.config import RunConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "Waveform",
    "load_wav",
    "save_wav",
    "resample",
    "crop_or_pad",
    "FeatureConfig",
    "stack_channels",
    "AcousticSSM",
    "EmbedderConfig",
    "ProjectionHead",
    "contrastive_loss",
    "ClassifierHead",
    "build_episode",
    "finetune",
    "evaluate",
    "RunConfig",
    "load_config",
]
