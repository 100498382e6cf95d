"""Component ablation machinery: the 2x2x2 design matrix and the alpha sweep.

The design matrix crosses {reconstruction pre-training} x {distribution
calibration} x {gradient coordination} into eight pipeline variants, runs each
over a set of seeds on the shifted downstream classification task, and
summarizes mean test accuracy per row plus a paired sign comparison of the
full pipeline against the scratch baseline.

Rows without pre-training still need a pretrain-tagged checkpoint for the
calibration stage, so a zero-step pretrain (random initialization, tagged
pretrain) stands in; that keeps stage-order enforcement uniform.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import torch

from .calibration import calibrate
from .config import RunConfig
from .data import Corpus, SyntheticSpec, downstream_spec_from, generate_corpus
from .evaluation import evaluate_classification
from .training import MetricsWriter, default_pretrain_corpus, run_finetune, run_pretrain

# (uses_pretrain, uses_calibration, uses_coordination), in presentation order
DESIGN_MATRIX: tuple[tuple[bool, bool, bool], ...] = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (False, True, True),
    (True, True, False),
    (True, False, True),
    (True, True, True),
)


def row_name(uses_pretrain: bool, uses_calibration: bool, uses_coordination: bool) -> str:
    parts = [
        "pretrain" if uses_pretrain else None,
        "calib" if uses_calibration else None,
        "coord" if uses_coordination else None,
    ]
    return "+".join(p for p in parts if p) or "scratch"


def ablation_config(seed: int, **overrides) -> RunConfig:
    """Run profile for the directional ablation.

    Pre-training happens on the clean corpus (so cross-modal grounding of the
    caption vocabulary forms within budget); the downstream corpus is shifted:
    color prior skewed, pixel noise raised, and rendering jitter enabled, with
    a deliberately small labeled train split. Gradient noise is disabled so
    every run is exactly reproducible from its seed.
    """
    values = dict(
        seed=seed,
        precision="float32",
        scheduler="cosine",
        batch_size=32,
        pretrain_steps=1600,
        calib_steps=100,
        finetune_steps=500,
        learning_rate=1e-3,
        eval_every=25,
        early_stop_patience=6,
        gradient_noise=False,
        downstream_samples=360,
        downstream_train_fraction=0.15,
        downstream_val_fraction=0.1,
        downstream_noise_level=0.06,
        downstream_label_rule="shape",
        num_classes=4,
    )
    values.update(overrides)
    return RunConfig(**values).validate()


def ablation_downstream_corpus(config: RunConfig) -> Corpus:
    """Shifted downstream task: skewed colors, extra noise, rendering jitter."""
    base = SyntheticSpec(
        n_samples=config.pretrain_samples,
        seed=config.data_seed,
        image_size=config.image_size,
        patch_size=config.patch_size,
        channels=config.channels,
        min_shape_size=5,
        max_shape_size=8,
        brightness_jitter=0.3,
    )
    spec = downstream_spec_from(
        base,
        n_samples=config.downstream_samples,
        skew=config.downstream_color_skew,
        noise_level=config.downstream_noise_level,
        train_fraction=config.downstream_train_fraction,
        val_fraction=config.downstream_val_fraction,
        label_rule=config.downstream_label_rule,
    )
    return generate_corpus(spec, kind="classification")


@dataclass
class AblationResult:
    seeds: tuple[int, ...]
    accuracies: dict[str, list[float]]  # row name -> accuracy per seed

    def mean(self, row: str) -> float:
        values = self.accuracies[row]
        return sum(values) / len(values)

    def sign_counts(self, row_a: str, row_b: str) -> tuple[int, int]:
        """(wins, losses) of row_a over row_b across seeds."""
        wins = sum(a > b for a, b in zip(self.accuracies[row_a], self.accuracies[row_b]))
        losses = sum(a < b for a, b in zip(self.accuracies[row_a], self.accuracies[row_b]))
        return wins, losses

    def full_vs_baseline_gate(self) -> bool:
        """Mean ordering plus one-sided paired sign check."""
        full, base = row_name(True, True, True), row_name(False, False, False)
        wins, losses = self.sign_counts(full, base)
        return self.mean(full) > self.mean(base) and wins > losses

    def summary(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "rows": {
                row: {"per_seed": values, "mean": self.mean(row)} for row, values in self.accuracies.items()
            },
            "full_vs_baseline": {
                "mean_gap": self.mean(row_name(True, True, True)) - self.mean(row_name(False, False, False)),
                "wins_losses": list(self.sign_counts(row_name(True, True, True), row_name(False, False, False))),
                "gate_passed": self.full_vs_baseline_gate(),
            },
        }


def run_design_matrix(
    seeds: tuple[int, ...],
    work_dir: str,
    config_overrides: dict | None = None,
    rows: tuple[tuple[bool, bool, bool], ...] = DESIGN_MATRIX,
) -> AblationResult:
    """Run the requested ablation rows for every seed; returns per-row accuracies.

    Within a seed the pre-trained checkpoint and both calibration variants are
    shared across the rows that use them.
    """
    os.makedirs(work_dir, exist_ok=True)
    accuracies: dict[str, list[float]] = {row_name(*row): [] for row in rows}
    overrides = config_overrides or {}
    for seed in seeds:
        config = ablation_config(seed, **overrides)
        dtype = torch.float32 if config.precision == "float32" else torch.float64
        pre_corpus = default_pretrain_corpus(config)
        down_corpus = ablation_downstream_corpus(config)

        checkpoints: dict[tuple[bool, bool], str] = {}

        def source_for(uses_pretrain: bool, uses_calibration: bool) -> str | None:
            if not uses_pretrain and not uses_calibration:
                return None
            key = (uses_pretrain, uses_calibration)
            if key in checkpoints:
                return checkpoints[key]
            pre_key = (uses_pretrain, False)
            if pre_key not in checkpoints:
                pre_path = os.path.join(work_dir, f"seed{seed}_{'pre' if uses_pretrain else 'init'}.bin")
                pre_config = config if uses_pretrain else replace(config, pretrain_steps=0)
                run_pretrain(pre_config, pre_corpus, out_path=pre_path)
                checkpoints[pre_key] = pre_path
            if not uses_calibration:
                return checkpoints[pre_key]
            cal_path = os.path.join(work_dir, f"seed{seed}_{'pre' if uses_pretrain else 'init'}_cal.bin")
            calibrate(config, checkpoints[pre_key], down_corpus, out_path=cal_path)
            checkpoints[key] = cal_path
            return cal_path

        for uses_pretrain, uses_calibration, uses_coordination in rows:
            source = source_for(uses_pretrain, uses_calibration)
            run_config = replace(config, use_coordination=uses_coordination)
            bundle, _, _ = run_finetune(run_config, source, down_corpus)
            accuracy = evaluate_classification(bundle, down_corpus.test, config.batch_size, dtype)
            accuracies[row_name(uses_pretrain, uses_calibration, uses_coordination)].append(accuracy)
    return AblationResult(seeds=tuple(seeds), accuracies=accuracies)


def run_alpha_sweep(
    alphas: tuple[float, ...],
    seed: int,
    work_dir: str,
    config_overrides: dict | None = None,
) -> dict[float, list[dict]]:
    """One complete pre-training run per alpha; returns the metrics per run.

    Each run also writes its metrics stream to work_dir so the chart can be
    rebuilt without re-running.
    """
    os.makedirs(work_dir, exist_ok=True)
    overrides = dict(config_overrides or {})
    results: dict[float, list[dict]] = {}
    for alpha in alphas:
        config = ablation_config(seed, **{**overrides, "alpha": alpha})
        metrics_path = os.path.join(work_dir, f"alpha_{alpha:g}.jsonl")
        if os.path.exists(metrics_path):
            os.remove(metrics_path)
        writer = MetricsWriter(metrics_path)
        out_path = os.path.join(work_dir, f"alpha_{alpha:g}.bin")
        _, writer = run_pretrain(config, default_pretrain_corpus(config), metrics=writer, out_path=out_path)
        results[alpha] = writer.records
    return results
