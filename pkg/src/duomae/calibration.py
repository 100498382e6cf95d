"""Label-free distribution calibration on the downstream corpus.

Continues mask-and-reconstruct training of a pre-trained model on downstream
image-text pairs before any supervised fine-tuning: the student encoder plus
the enabled per-objective decoders/projectors are optimized jointly while the
EMA teacher keeps tracking the student. Downstream labels are never read, so
the output is invariant to label permutation or corruption.
"""

from __future__ import annotations

import torch

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash
from .coordination import check_finite_gradients
from .data import Corpus
from .ema import EmaState
from .errors import EmptyInputError
from .model import ModelBundle
from .training import (
    MetricsWriter,
    batch_for_step,
    build_optimizer,
    learning_rate_at,
    pretrain_losses,
    set_learning_rate,
)


def calibrate(
    config: RunConfig,
    source: Checkpoint | str,
    corpus: Corpus,
    metrics: MetricsWriter | None = None,
    out_path: str | None = None,
) -> tuple[ModelBundle, MetricsWriter]:
    """Adapt a pretrain-tagged checkpoint to the downstream distribution.

    Only pretrain-tagged checkpoints are accepted; the result is tagged calib.
    A zero-step budget is a pure re-tag: output weights are bit-identical to
    the input.
    """
    config.validate()
    metrics = metrics or MetricsWriter()
    ckpt = load_checkpoint(source) if isinstance(source, str) else source
    ckpt.require_stage("pretrain")
    if len(corpus.train) == 0:
        raise EmptyInputError("calibration corpus has no training samples")

    torch.manual_seed(config.seed)
    bundle = ckpt.build_bundle(seed=config.seed)
    objectives = config.objective_set()
    if config.calib_include_match:
        objectives = objectives + ("itm",)
    optimizer = build_optimizer(
        bundle.calib_parameters(config.objective_set(), config.calib_include_match), config
    )
    ema = EmaState(decay=config.ema_decay)

    for step in range(config.calib_steps):
        bundle.train()
        samples = batch_for_step(corpus.train, config.batch_size, config.seed, step)
        losses = pretrain_losses(bundle, samples, corpus.vocab, config, step, objectives=objectives)
        optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        check_finite_gradients(bundle)
        lr = learning_rate_at(step, config.calib_steps, config.learning_rate, config.warmup_ratio, config.scheduler)
        set_learning_rate(optimizer, lr)
        optimizer.step()
        ema.update(bundle.teacher, bundle.student)
        record = {"step": step, "lr": lr, "total": float(losses.total.detach())}
        record.update({k: v for k, v in losses.bundle(config.alpha).to_dict().items() if k != "total"})
        metrics.write(record)

    if out_path:
        save_checkpoint(out_path, bundle, "calib", config.calib_steps, config_hash(config), config.precision, optimizer)
    return bundle, metrics
