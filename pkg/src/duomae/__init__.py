"""Dual-stream masked reconstruction pre-training for paired image-text data,
with downstream distribution calibration and gradient-coordinated fine-tuning.
"""

from .config import RunConfig, load_config, save_config, config_hash
from .data import (
    Corpus,
    ImageSample,
    PairedSample,
    SyntheticSpec,
    TaskDataset,
    TextSample,
    Vocabulary,
    generate_corpus,
    load_corpus,
    save_corpus,
    tokenize,
)
from .estimators import DistributionCalibrator, ModalityBalancedClassifier, ReconstructionPretrainer
from .losses import LossBundle
from .masking import MaskPlan, mask_image, mask_text
from .model import ModelBundle, ModelConfig, build_bundle
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "Checkpoint",
    "Corpus",
    "DistributionCalibrator",
    "ImageSample",
    "LossBundle",
    "MaskPlan",
    "ModalityBalancedClassifier",
    "ModelBundle",
    "ModelConfig",
    "PairedSample",
    "ReconstructionPretrainer",
    "RunConfig",
    "SyntheticSpec",
    "TaskDataset",
    "TextSample",
    "Vocabulary",
    "build_bundle",
    "config_hash",
    "generate_corpus",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "mask_image",
    "mask_text",
    "save_checkpoint",
    "save_config",
    "save_corpus",
    "tokenize",
]

__version__ = "0.1.0"
