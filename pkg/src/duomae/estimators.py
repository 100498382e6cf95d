"""Scikit-learn style estimators wrapping the three pipeline stages.

Each stage is fit-shaped: it consumes a corpus and produces fitted model
state, exposed through the usual sklearn conventions (all hyper-parameters as
constructor arguments, ``get_params``/``set_params`` from BaseEstimator,
fitted attributes with a trailing underscore). The classifier additionally
offers predict/predict_proba/score so it slots into sklearn tooling.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .calibration import calibrate
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash
from .data import Corpus, TaskDataset
from .errors import ConfigurationError
from .evaluation import evaluate_classification, predict_classification
from .tensors import collate_pairs
from .training import MetricsWriter, run_finetune, run_pretrain

_SHARED_FIELDS = (
    "embed_dim",
    "latent_dim",
    "encoder_layers",
    "fusion_layers",
    "decoder_layers",
    "num_heads",
    "mlp_ratio",
    "dropout",
    "num_classes",
    "precision",
    "image_mask_ratio",
    "text_mask_ratio",
    "alpha",
    "ema_decay",
    "learning_rate",
    "weight_decay",
    "warmup_ratio",
    "scheduler",
    "batch_size",
    "seed",
)


def _resolve_source(source: Checkpoint | str | None) -> Checkpoint | None:
    if source is None or isinstance(source, Checkpoint):
        return source
    return load_checkpoint(source)


class _StageEstimator(BaseEstimator):
    """Common config plumbing for the stage estimators."""

    def _run_config(self, **overrides) -> RunConfig:
        values = {name: getattr(self, name) for name in _SHARED_FIELDS}
        values.update(overrides)
        defaults = {f.name for f in dataclasses.fields(RunConfig)}
        return RunConfig(**{k: v for k, v in values.items() if k in defaults}).validate()


class ReconstructionPretrainer(_StageEstimator):
    """Stage one: masked multi-level reconstruction pre-training.

    fit(corpus) trains student encoder, decoders, projectors, and match head
    on unlabeled pairs and leaves the fitted bundle on ``bundle_``.
    """

    def __init__(
        self,
        embed_dim: int = 32,
        latent_dim: int = 16,
        encoder_layers: int = 2,
        fusion_layers: int = 2,
        decoder_layers: int = 1,
        num_heads: int = 2,
        mlp_ratio: float = 4.0,
        dropout: float = 0.1,
        num_classes: int = 4,
        precision: str = "float64",
        image_mask_ratio: float = 0.75,
        text_mask_ratio: float = 0.15,
        alpha: float = 0.5,
        ema_decay: float = 0.995,
        learning_rate: float = 1e-3,
        fusion_lr_multiplier: float = 5.0,
        weight_decay: float = 0.01,
        warmup_ratio: float = 0.1,
        scheduler: str = "linear",
        batch_size: int = 32,
        steps: int = 2000,
        seed: int = 0,
        metrics_path: str | None = None,
        checkpoint_path: str | None = None,
        resume_from: str | None = None,
    ):
        self.embed_dim = embed_dim
        self.latent_dim = latent_dim
        self.encoder_layers = encoder_layers
        self.fusion_layers = fusion_layers
        self.decoder_layers = decoder_layers
        self.num_heads = num_heads
        self.mlp_ratio = mlp_ratio
        self.dropout = dropout
        self.num_classes = num_classes
        self.precision = precision
        self.image_mask_ratio = image_mask_ratio
        self.text_mask_ratio = text_mask_ratio
        self.alpha = alpha
        self.ema_decay = ema_decay
        self.learning_rate = learning_rate
        self.fusion_lr_multiplier = fusion_lr_multiplier
        self.weight_decay = weight_decay
        self.warmup_ratio = warmup_ratio
        self.scheduler = scheduler
        self.batch_size = batch_size
        self.steps = steps
        self.seed = seed
        self.metrics_path = metrics_path
        self.checkpoint_path = checkpoint_path
        self.resume_from = resume_from

    def fit(self, corpus: Corpus, y=None) -> "ReconstructionPretrainer":
        config = self._run_config(
            stage="pretrain", pretrain_steps=self.steps, fusion_lr_multiplier=self.fusion_lr_multiplier
        )
        writer = MetricsWriter(self.metrics_path)
        bundle, writer = run_pretrain(
            config, corpus, resume=self.resume_from, metrics=writer, out_path=self.checkpoint_path
        )
        self.bundle_ = bundle
        self.config_ = config
        self.metrics_ = writer.records
        return self

    def save(self, path: str) -> None:
        check_is_fitted(self, "bundle_")
        save_checkpoint(path, self.bundle_, "pretrain", self.steps, config_hash(self.config_), self.precision)


class DistributionCalibrator(_StageEstimator):
    """Stage two: label-free mask-and-reconstruct adaptation to the
    downstream corpus. Requires a pretrain-tagged source checkpoint."""

    def __init__(
        self,
        source: Checkpoint | str | None = None,
        objectives: str = "mim,mlm,feamim,feamlm",
        include_match: bool = False,
        embed_dim: int = 32,
        latent_dim: int = 16,
        encoder_layers: int = 2,
        fusion_layers: int = 2,
        decoder_layers: int = 1,
        num_heads: int = 2,
        mlp_ratio: float = 4.0,
        dropout: float = 0.1,
        num_classes: int = 4,
        precision: str = "float64",
        image_mask_ratio: float = 0.75,
        text_mask_ratio: float = 0.15,
        alpha: float = 0.5,
        ema_decay: float = 0.995,
        learning_rate: float = 1e-3,
        weight_decay: float = 0.01,
        warmup_ratio: float = 0.1,
        scheduler: str = "linear",
        batch_size: int = 16,
        steps: int = 200,
        seed: int = 0,
        metrics_path: str | None = None,
        checkpoint_path: str | None = None,
    ):
        self.source = source
        self.objectives = objectives
        self.include_match = include_match
        self.embed_dim = embed_dim
        self.latent_dim = latent_dim
        self.encoder_layers = encoder_layers
        self.fusion_layers = fusion_layers
        self.decoder_layers = decoder_layers
        self.num_heads = num_heads
        self.mlp_ratio = mlp_ratio
        self.dropout = dropout
        self.num_classes = num_classes
        self.precision = precision
        self.image_mask_ratio = image_mask_ratio
        self.text_mask_ratio = text_mask_ratio
        self.alpha = alpha
        self.ema_decay = ema_decay
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.warmup_ratio = warmup_ratio
        self.scheduler = scheduler
        self.batch_size = batch_size
        self.steps = steps
        self.seed = seed
        self.metrics_path = metrics_path
        self.checkpoint_path = checkpoint_path

    def fit(self, corpus: Corpus, y=None) -> "DistributionCalibrator":
        if self.source is None:
            raise ConfigurationError("DistributionCalibrator needs a pretrain-tagged source checkpoint")
        config = self._run_config(
            stage="calib",
            calib_steps=self.steps,
            calib_objectives=self.objectives,
            calib_include_match=self.include_match,
        )
        writer = MetricsWriter(self.metrics_path)
        bundle, writer = calibrate(
            config, _resolve_source(self.source), corpus, metrics=writer, out_path=self.checkpoint_path
        )
        self.bundle_ = bundle
        self.config_ = config
        self.metrics_ = writer.records
        return self

    def save(self, path: str) -> None:
        check_is_fitted(self, "bundle_")
        save_checkpoint(path, self.bundle_, "calib", self.steps, config_hash(self.config_), self.precision)


class ModalityBalancedClassifier(_StageEstimator, ClassifierMixin):
    """Stage three: supervised fine-tuning with per-step gradient coordination.

    ``source=None`` trains from scratch (the ablation baseline); otherwise a
    pretrain- or calib-tagged checkpoint seeds the encoder.
    """

    def __init__(
        self,
        source: Checkpoint | str | None = None,
        use_coordination: bool = True,
        beta: float = 0.1,
        gradient_noise: bool = True,
        embed_dim: int = 32,
        latent_dim: int = 16,
        encoder_layers: int = 2,
        fusion_layers: int = 2,
        decoder_layers: int = 1,
        num_heads: int = 2,
        mlp_ratio: float = 4.0,
        dropout: float = 0.1,
        num_classes: int = 4,
        precision: str = "float64",
        image_mask_ratio: float = 0.75,
        text_mask_ratio: float = 0.15,
        alpha: float = 0.5,
        ema_decay: float = 0.995,
        learning_rate: float = 1e-3,
        weight_decay: float = 0.01,
        warmup_ratio: float = 0.1,
        scheduler: str = "linear",
        batch_size: int = 16,
        steps: int = 300,
        eval_every: int = 50,
        early_stop_patience: int = 0,
        seed: int = 0,
        metrics_path: str | None = None,
        coordination_log_path: str | None = None,
        checkpoint_path: str | None = None,
    ):
        self.source = source
        self.use_coordination = use_coordination
        self.beta = beta
        self.gradient_noise = gradient_noise
        self.embed_dim = embed_dim
        self.latent_dim = latent_dim
        self.encoder_layers = encoder_layers
        self.fusion_layers = fusion_layers
        self.decoder_layers = decoder_layers
        self.num_heads = num_heads
        self.mlp_ratio = mlp_ratio
        self.dropout = dropout
        self.num_classes = num_classes
        self.precision = precision
        self.image_mask_ratio = image_mask_ratio
        self.text_mask_ratio = text_mask_ratio
        self.alpha = alpha
        self.ema_decay = ema_decay
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.warmup_ratio = warmup_ratio
        self.scheduler = scheduler
        self.batch_size = batch_size
        self.steps = steps
        self.eval_every = eval_every
        self.early_stop_patience = early_stop_patience
        self.seed = seed
        self.metrics_path = metrics_path
        self.coordination_log_path = coordination_log_path
        self.checkpoint_path = checkpoint_path

    def fit(self, corpus: Corpus, y=None) -> "ModalityBalancedClassifier":
        config = self._run_config(
            stage="finetune",
            finetune_steps=self.steps,
            beta=self.beta,
            gradient_noise=self.gradient_noise,
            use_coordination=self.use_coordination,
            eval_every=self.eval_every,
            early_stop_patience=self.early_stop_patience,
        )
        writer = MetricsWriter(self.metrics_path)
        coord_writer = MetricsWriter(self.coordination_log_path)
        bundle, writer, states = run_finetune(
            config,
            _resolve_source(self.source),
            corpus,
            metrics=writer,
            coordination_log=coord_writer,
            out_path=self.checkpoint_path,
        )
        self.bundle_ = bundle
        self.config_ = config
        self.metrics_ = writer.records
        self.coordination_states_ = states
        self.classes_ = np.arange(bundle.cfg.num_classes)
        return self

    def _dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32

    def predict(self, dataset: TaskDataset) -> np.ndarray:
        check_is_fitted(self, "bundle_")
        preds, _ = predict_classification(self.bundle_, dataset, self.batch_size, self._dtype())
        return preds

    @torch.no_grad()
    def predict_proba(self, dataset: TaskDataset) -> np.ndarray:
        check_is_fitted(self, "bundle_")
        self.bundle_.eval()
        rows = []
        for start in range(0, len(dataset), self.batch_size):
            batch = collate_pairs(dataset.samples[start : start + self.batch_size], self._dtype())
            z_image, z_text = self.bundle_.student(batch.patches, batch.tokens)
            joint, _, _ = self.bundle_.task_heads(z_image, z_text)
            rows.append(torch.softmax(joint, dim=-1).numpy())
        return np.concatenate(rows)

    def score(self, dataset: TaskDataset, y=None) -> float:
        check_is_fitted(self, "bundle_")
        return evaluate_classification(self.bundle_, dataset, self.batch_size, self._dtype())

    def save(self, path: str) -> None:
        check_is_fitted(self, "bundle_")
        save_checkpoint(path, self.bundle_, "finetune", self.steps, config_hash(self.config_), self.precision)
