"""Run configuration: dataclass, flat key=value file parsing, and hashing.

Config files are plain text, one `key = value` per line, `#` comments allowed.
Keys must match RunConfig fields exactly; unknown keys are rejected so config
drift fails loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

from .errors import ConfigurationError
from .validation import check_choice, check_closed_unit, check_open_unit

STAGES = ("pretrain", "calib", "finetune")
SCHEDULERS = ("linear", "cosine")


@dataclass
class RunConfig:
    """Hyper-parameters and paths for one pipeline run.

    Full-scale reference values that the toy defaults stand in for:
    embed_dim 768, num_heads 12, fusion_layers 6; pre-training learning rate
    1e-5 for the uni-modal encoders and 5e-5 for fusion; per-dataset fine-tune
    learning rates in the 5e-6..1e-5 range.
    """

    stage: str = "pretrain"

    # model dimensions (toy scale)
    embed_dim: int = 32
    latent_dim: int = 16
    encoder_layers: int = 2
    fusion_layers: int = 2
    decoder_layers: int = 1
    num_heads: int = 2
    mlp_ratio: float = 4.0
    dropout: float = 0.1
    num_classes: int = 4
    precision: str = "float64"

    # masking and objective mixing
    image_mask_ratio: float = 0.75
    text_mask_ratio: float = 0.15
    alpha: float = 0.5
    ema_decay: float = 0.995
    beta: float = 0.1
    gradient_noise: bool = True
    use_coordination: bool = True
    calib_objectives: str = "mim,mlm,feamim,feamlm"
    calib_include_match: bool = False

    # optimization
    learning_rate: float = 1e-3
    fusion_lr_multiplier: float = 5.0
    weight_decay: float = 0.01
    warmup_ratio: float = 0.1
    scheduler: str = "linear"
    batch_size: int = 32
    pretrain_steps: int = 2000
    calib_steps: int = 150
    finetune_steps: int = 200
    eval_every: int = 50
    checkpoint_every: int = 0
    early_stop_patience: int = 0

    # synthetic corpora
    data_seed: int = 7
    pretrain_samples: int = 256
    downstream_samples: int = 200
    downstream_train_fraction: float = 0.2
    downstream_val_fraction: float = 0.2
    image_size: int = 16
    patch_size: int = 4
    channels: int = 3
    noise_level: float = 0.02
    min_shape_size: int = 0
    max_shape_size: int = 0
    brightness_jitter: float = 0.0
    downstream_noise_level: float = 0.08
    downstream_color_skew: float = 0.85
    downstream_label_rule: str = "shape"

    # run bookkeeping
    seed: int = 0
    work_dir: str = "runs"

    def validate(self) -> "RunConfig":
        check_choice("stage", self.stage, STAGES)
        check_choice("scheduler", self.scheduler, SCHEDULERS)
        check_choice("precision", self.precision, ("float32", "float64"))
        check_open_unit("image_mask_ratio", self.image_mask_ratio)
        check_open_unit("text_mask_ratio", self.text_mask_ratio)
        check_closed_unit("alpha", self.alpha)
        check_open_unit("ema_decay", self.ema_decay)
        check_closed_unit("warmup_ratio", self.warmup_ratio)
        check_closed_unit("dropout", self.dropout)
        check_choice("downstream_label_rule", self.downstream_label_rule, ("shape", "shape_color"))
        if self.beta <= 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta!r}")
        if self.fusion_lr_multiplier <= 0:
            raise ConfigurationError("fusion_lr_multiplier must be positive")
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError(
                f"image_size {self.image_size} must be divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} must be divisible by num_heads {self.num_heads}"
            )
        if self.latent_dim >= self.embed_dim:
            raise ConfigurationError("latent_dim must be smaller than embed_dim")
        for name in ("learning_rate", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for objective in self.objective_set():
            check_choice("calib_objectives entry", objective, ("mim", "mlm", "feamim", "feamlm"))
        return self

    def objective_set(self) -> tuple[str, ...]:
        return tuple(part.strip() for part in self.calib_objectives.split(",") if part.strip())


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str) -> object:
    field_type = _FIELDS[name].type
    raw = raw.strip()
    if field_type == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"config key {name!r} expects a boolean, got {raw!r}")
    try:
        if field_type == "int":
            return int(raw)
        if field_type == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"config key {name!r}: {exc}") from exc
    return raw


def load_config(path: str) -> RunConfig:
    """Parse a flat key=value config file into a validated RunConfig."""
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in _FIELDS:
                raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    return RunConfig(**values).validate()


def dump_config(config: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


def save_config(config: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(config))


def config_hash(config: RunConfig) -> str:
    """Stable digest of every config field, used to tag checkpoints."""
    canonical = "\n".join(
        f"{f.name}={getattr(config, f.name)!r}" for f in sorted(dataclasses.fields(RunConfig), key=lambda f: f.name)
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
