"""Training loops: reconstruction pre-training and coordinated fine-tuning.

Both loops are step-based. The batch for step t is a pure function of
(dataset, seed, t): each epoch's order is a derived permutation, every sample
appears exactly once per epoch, and the final partial batch is included. That,
plus derived per-step RNG streams and checkpointed optimizer/torch-RNG state,
makes save -> load -> continue reproduce an uninterrupted run bit-exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import torch

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash
from .coordination import CoordinationState, check_finite_gradients, coordinated_step
from .data import Corpus, TaskDataset, epoch_permutation, generate_corpus, downstream_spec_from, SyntheticSpec
from .ema import EmaState
from .errors import ConfigurationError, ContractError
from .losses import (
    LossBundle,
    compose_pretrain,
    feature_alignment_loss,
    masked_image_loss,
    masked_token_loss,
    pair_match_loss,
)
from .model import ModelBundle, ModelConfig, build_bundle
from .tensors import build_match_batch, collate_masked, collate_pairs, noise_generator

_PRECISIONS = {"float32": torch.float32, "float64": torch.float64}


class MetricsWriter:
    """Append-only JSON-lines metrics stream with monotone step ordering."""

    def __init__(self, path: str | None = None):
        self.path = path
        self.records: list[dict] = []
        self._last_step = -1
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    def write(self, record: dict) -> None:
        step = record.get("step", -1)
        if step <= self._last_step:
            raise ContractError(f"metrics steps must increase: {step} after {self._last_step}")
        self._last_step = step
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")


def read_metrics(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def model_config_from(config: RunConfig, vocab_size: int, max_text_len: int) -> ModelConfig:
    grid = config.image_size // config.patch_size
    return ModelConfig(
        embed_dim=config.embed_dim,
        latent_dim=config.latent_dim,
        encoder_layers=config.encoder_layers,
        fusion_layers=config.fusion_layers,
        decoder_layers=config.decoder_layers,
        num_heads=config.num_heads,
        mlp_ratio=config.mlp_ratio,
        dropout=config.dropout,
        num_patches=grid * grid,
        patch_dim=config.channels * config.patch_size**2,
        vocab_size=vocab_size,
        max_text_len=max_text_len,
        num_classes=config.num_classes,
    )


def learning_rate_at(step: int, total_steps: int, base: float, warmup_ratio: float, kind: str) -> float:
    """Linear warm-up over warmup_ratio of the budget, then linear or cosine decay."""
    warmup = int(warmup_ratio * total_steps)
    if step < warmup:
        return base * (step + 1) / warmup
    span = max(1, total_steps - warmup)
    progress = (step - warmup) / span
    if kind == "cosine":
        return base * 0.5 * (1.0 + math.cos(math.pi * progress))
    return base * (1.0 - progress)


def set_learning_rate(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr * group.get("lr_scale", 1.0)


def build_optimizer(params: list[torch.nn.Parameter], config: RunConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)


def build_pretrain_optimizer(bundle: ModelBundle, config: RunConfig) -> torch.optim.Optimizer:
    """Uni-modal encoders at the base rate; fusion, decoders, projectors, and
    the match head at fusion_lr_multiplier times the base rate."""
    uni = bundle.modality_parameters("image") + bundle.modality_parameters("text")
    uni_ids = {id(p) for p in uni}
    rest = [p for p in bundle.pretrain_parameters() if id(p) not in uni_ids]
    return torch.optim.AdamW(
        [
            {"params": uni, "lr": config.learning_rate, "lr_scale": 1.0},
            {"params": rest, "lr": config.learning_rate * config.fusion_lr_multiplier, "lr_scale": config.fusion_lr_multiplier},
        ],
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )


def batch_for_step(dataset: TaskDataset, batch_size: int, seed: int, step: int) -> list:
    """The step's batch under per-epoch derived permutations."""
    steps_per_epoch = math.ceil(len(dataset) / batch_size)
    epoch, position = divmod(step, steps_per_epoch)
    order = epoch_permutation(len(dataset), seed, epoch)
    chosen = order[position * batch_size : (position + 1) * batch_size]
    return [dataset.samples[i] for i in chosen]


@dataclass
class PretrainStepLosses:
    image_recon: torch.Tensor
    token_recon: torch.Tensor
    image_feature: torch.Tensor
    text_feature: torch.Tensor
    pair_match: torch.Tensor
    total: torch.Tensor

    def bundle(self, alpha: float) -> LossBundle:
        return LossBundle(
            image_recon=float(self.image_recon.detach()),
            token_recon=float(self.token_recon.detach()),
            image_feature=float(self.image_feature.detach()),
            text_feature=float(self.text_feature.detach()),
            pair_match=float(self.pair_match.detach()),
            alpha=alpha,
        )


def pretrain_losses(
    bundle: ModelBundle,
    samples: list,
    vocab,
    config: RunConfig,
    step: int,
    objectives: tuple[str, ...] = ("mim", "mlm", "feamim", "feamlm", "itm"),
) -> PretrainStepLosses:
    """All enabled reconstruction/matching losses for one batch.

    Dual-stream layout: the student encodes the masked pair, the teacher (eval
    mode, no grad) encodes the original pair for the feature targets, and the
    pair-match pass runs the student on original images against kept/swapped
    texts.
    """
    dtype = _PRECISIONS[config.precision]
    masked = collate_masked(
        samples, vocab, config.image_mask_ratio, config.text_mask_ratio, config.seed, step, dtype
    )
    full = collate_pairs(samples, dtype)
    zero = torch.zeros((), dtype=dtype)

    need_student_masked = any(o in objectives for o in ("mim", "mlm", "feamim", "feamlm"))
    z_image = z_text = None
    if need_student_masked:
        z_image, z_text = bundle.student(masked.patches, masked.tokens, image_masked=masked.image_masked)

    image_recon = (
        masked_image_loss(bundle.vision_decoder(z_image, masked.image_masked), masked.image_targets)
        if "mim" in objectives
        else zero
    )
    token_recon = (
        masked_token_loss(bundle.language_decoder(z_text, masked.text_masked), masked.token_targets)
        if "mlm" in objectives
        else zero
    )

    image_feature = text_feature = zero
    if "feamim" in objectives or "feamlm" in objectives:
        with torch.no_grad():
            teacher_image, teacher_text = bundle.teacher(full.patches, full.tokens)
        if "feamim" in objectives:
            image_feature = feature_alignment_loss(
                bundle.projector(z_image, "image"), bundle.projector(teacher_image, "image")
            )
        if "feamlm" in objectives:
            text_feature = feature_alignment_loss(
                bundle.projector(z_text, "text"), bundle.projector(teacher_text, "text")
            )

    pair_match = zero
    if "itm" in objectives:
        match_tokens, match_labels = build_match_batch(samples, config.seed, step)
        match_image, match_text = bundle.student(full.patches, match_tokens)
        pair_match = pair_match_loss(bundle.match_head(match_image, match_text), match_labels)

    total = compose_pretrain(image_recon, token_recon, image_feature, text_feature, pair_match, config.alpha)
    return PretrainStepLosses(image_recon, token_recon, image_feature, text_feature, pair_match, total)


def _base_spec(config: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(
        n_samples=config.pretrain_samples,
        seed=config.data_seed,
        image_size=config.image_size,
        patch_size=config.patch_size,
        channels=config.channels,
        noise_level=config.noise_level,
        min_shape_size=config.min_shape_size,
        max_shape_size=config.max_shape_size,
        brightness_jitter=config.brightness_jitter,
    )


def default_pretrain_corpus(config: RunConfig) -> Corpus:
    return generate_corpus(_base_spec(config))


def default_downstream_corpus(config: RunConfig, kind: str = "classification") -> Corpus:
    base = _base_spec(config)
    spec = downstream_spec_from(
        base,
        n_samples=config.downstream_samples,
        skew=config.downstream_color_skew,
        noise_level=config.downstream_noise_level,
        train_fraction=config.downstream_train_fraction,
        val_fraction=config.downstream_val_fraction,
        label_rule=config.downstream_label_rule,
    )
    return generate_corpus(spec, kind=kind)


def run_pretrain(
    config: RunConfig,
    corpus: Corpus | None = None,
    resume: Checkpoint | str | None = None,
    metrics: MetricsWriter | None = None,
    out_path: str | None = None,
) -> tuple[ModelBundle, MetricsWriter]:
    """Algorithm stage one: mask -> dual-stream forward -> composite loss ->
    optimizer step -> EMA teacher update, for the configured step budget."""
    config.validate()
    corpus = corpus or default_pretrain_corpus(config)
    metrics = metrics or MetricsWriter()
    dtype = _PRECISIONS[config.precision]
    cfg_hash = config_hash(config)
    model_cfg = model_config_from(config, len(corpus.vocab), max_text_len=max(16, corpus.train.samples[0].text.length))

    if resume is not None:
        ckpt = load_checkpoint(resume) if isinstance(resume, str) else resume
        ckpt.require_stage("pretrain")
        if ckpt.config_hash != cfg_hash:
            raise ConfigurationError("resume checkpoint was produced under a different config")
        bundle = ckpt.build_bundle(seed=config.seed)
        start_step = ckpt.step
    else:
        torch.manual_seed(config.seed)
        bundle = build_bundle(model_cfg, seed=config.seed, dtype=dtype)
        start_step = 0

    optimizer = build_pretrain_optimizer(bundle, config)
    if resume is not None:
        ckpt.restore_optimizer(optimizer, dict(bundle.named_parameters()))
        ckpt.restore_torch_rng()
    ema = EmaState(decay=config.ema_decay, step=start_step)

    for step in range(start_step, config.pretrain_steps):
        bundle.train()
        samples = batch_for_step(corpus.train, config.batch_size, config.seed, step)
        losses = pretrain_losses(bundle, samples, corpus.vocab, config, step)
        optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        check_finite_gradients(bundle)
        lr = learning_rate_at(step, config.pretrain_steps, config.learning_rate, config.warmup_ratio, config.scheduler)
        set_learning_rate(optimizer, lr)
        optimizer.step()
        ema.update(bundle.teacher, bundle.student)

        record = {"step": step, "lr": lr, "total": float(losses.total.detach())}
        record.update({k: v for k, v in losses.bundle(config.alpha).to_dict().items() if k != "total"})
        metrics.write(record)

        if out_path and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0 and step + 1 < config.pretrain_steps:
            save_checkpoint(out_path, bundle, "pretrain", step + 1, cfg_hash, config.precision, optimizer)

    if out_path:
        save_checkpoint(out_path, bundle, "pretrain", config.pretrain_steps, cfg_hash, config.precision, optimizer)
    return bundle, metrics


def run_finetune(
    config: RunConfig,
    source: Checkpoint | str | None,
    corpus: Corpus | None = None,
    metrics: MetricsWriter | None = None,
    coordination_log: MetricsWriter | None = None,
    out_path: str | None = None,
) -> tuple[ModelBundle, MetricsWriter, list[CoordinationState]]:
    """Supervised fine-tuning, per-step gradient coordination optional.

    Accepts a pretrain- or calib-tagged checkpoint, or None to train from
    scratch (the ablation baseline). Decoders and projectors are left frozen;
    the task heads replace them as the trained output surface.
    """
    config.validate()
    corpus = corpus or default_downstream_corpus(config)
    metrics = metrics or MetricsWriter()
    coordination_log = coordination_log or MetricsWriter()
    dtype = _PRECISIONS[config.precision]
    cfg_hash = config_hash(config)

    if source is not None:
        ckpt = load_checkpoint(source) if isinstance(source, str) else source
        ckpt.require_stage("pretrain", "calib")
        torch.manual_seed(config.seed)
        bundle = ckpt.build_bundle(seed=config.seed)
    else:
        torch.manual_seed(config.seed)
        model_cfg = model_config_from(config, len(corpus.vocab), max_text_len=max(16, corpus.train.samples[0].text.length))
        bundle = build_bundle(model_cfg, seed=config.seed, dtype=dtype)

    optimizer = build_optimizer(bundle.finetune_parameters(), config)
    states: list[CoordinationState] = []
    best_val, since_best = -1.0, 0

    from .evaluation import evaluate_classification  # local import to avoid a cycle

    for step in range(config.finetune_steps):
        bundle.train()
        samples = batch_for_step(corpus.train, config.batch_size, config.seed, step)
        batch = collate_pairs(samples, dtype)
        lr = learning_rate_at(step, config.finetune_steps, config.learning_rate, config.warmup_ratio, config.scheduler)
        set_learning_rate(optimizer, lr)
        gen = noise_generator(config.seed, step) if config.gradient_noise else None
        state, loss = coordinated_step(
            bundle,
            batch.patches,
            batch.tokens,
            batch.labels,
            optimizer,
            beta=config.beta,
            step=step,
            noise_generator=gen,
            coordinate=config.use_coordination,
        )
        record: dict = {"step": step, "lr": lr, "loss": loss}
        if state is not None:
            states.append(state)
            coordination_log.write(state.to_dict())
            record.update({k: v for k, v in state.to_dict().items() if k != "step"})

        if config.eval_every and (step + 1) % config.eval_every == 0:
            val_acc = evaluate_classification(bundle, corpus.val, config.batch_size, dtype)
            record["val_accuracy"] = val_acc
            if config.early_stop_patience:
                if val_acc > best_val:
                    best_val, since_best = val_acc, 0
                else:
                    since_best += 1
                    if since_best >= config.early_stop_patience:
                        metrics.write(record)
                        break
        metrics.write(record)

    if out_path:
        save_checkpoint(out_path, bundle, "finetune", config.finetune_steps, cfg_hash, config.precision, optimizer)
    return bundle, metrics, states
