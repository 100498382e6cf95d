"""Command-line harness: pretrain -> calibrate -> finetune -> eval, plus plots
and the component ablation.

Exit codes: 0 success, 2 configuration error, 3 pipeline-order error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import torch

from .ablation import (
    DESIGN_MATRIX,
    ablation_config,
    ablation_downstream_corpus,
    run_alpha_sweep,
    run_design_matrix,
)
from .calibration import calibrate
from .checkpoint import load_checkpoint
from .config import RunConfig, config_hash, load_config
from .data import load_corpus, save_corpus
from .errors import ConfigurationError, DuomaeError, EmptyInputError, NumericalError, PipelineOrderError
from .evaluation import evaluate_classification, evaluate_pair_matching, evaluate_retrieval
from .plots import plot_alpha_sweep, plot_design_matrix, plot_loss_curves
from .training import (
    MetricsWriter,
    default_downstream_corpus,
    default_pretrain_corpus,
    read_metrics,
    run_finetune,
    run_pretrain,
)

EXIT_CODES: tuple[tuple[type, int], ...] = (
    (ConfigurationError, 2),
    (EmptyInputError, 2),
    (PipelineOrderError, 3),
    (NumericalError, 4),
)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "alpha", None) is not None:
        config.alpha = args.alpha
    if getattr(args, "noise_off", False):
        config.gradient_noise = False
    if getattr(args, "no_gmcoord", False):
        config.use_coordination = False
    return config.validate()


def _corpus_for(args: argparse.Namespace, config: RunConfig, which: str):
    """Load a corpus from --data-dir, or generate it (and persist it there)."""
    data_dir = getattr(args, "data_dir", None)
    if data_dir and os.path.exists(os.path.join(data_dir, "manifest.jsonl")):
        return load_corpus(data_dir)
    corpus = default_pretrain_corpus(config) if which == "pretrain" else default_downstream_corpus(config)
    if data_dir:
        save_corpus(corpus, data_dir)
        return load_corpus(data_dir)
    return corpus


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--data-dir", help="corpus directory (loaded if present, else generated)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duomae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="masked multi-level reconstruction pre-training")
    _add_common(p)
    p.add_argument("--alpha", type=float, help="feature/data reconstruction trade-off")
    p.add_argument("--resume", help="resume from a pretrain checkpoint")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--metrics", help="metrics jsonl path")

    p = sub.add_parser("calibrate", help="label-free calibration on the downstream corpus")
    _add_common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--checkpoint", required=True, help="pretrain-tagged source checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")

    p = sub.add_parser("finetune", help="supervised fine-tuning with gradient coordination")
    _add_common(p)
    p.add_argument("--checkpoint", help="pretrain- or calib-tagged source; omit to train from scratch")
    p.add_argument("--no-gmcoord", action="store_true", help="plain supervised steps")
    p.add_argument("--noise-off", action="store_true", help="disable coordination noise")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    p.add_argument("--coordination-log", help="per-step coordination state jsonl")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("classification", "retrieval", "matching"), default="classification")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("plot", help="chart a metrics log")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="training loss")

    p = sub.add_parser("ablate", help="component design matrix or alpha sweep")
    _add_common(p)
    p.add_argument("--sweep", choices=("matrix", "alpha"), default="matrix")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--alphas", type=float, nargs="+", default=[0.2, 0.5, 0.8])
    p.add_argument("--steps", type=int, help="override pre-training steps for sweep runs")
    p.add_argument("--noise-off", action="store_true")
    p.add_argument("--no-tdcalib", action="store_true", help="drop calibration rows from the matrix")
    p.add_argument("--no-gmcoord", action="store_true", help="drop coordination rows from the matrix")
    p.add_argument("--out-dir", required=True)
    return parser


def _dtype(config: RunConfig) -> torch.dtype:
    return torch.float64 if config.precision == "float64" else torch.float32


def run(args: argparse.Namespace) -> int:
    if args.command == "pretrain":
        config = _resolve_config(args)
        corpus = _corpus_for(args, config, "pretrain")
        run_pretrain(config, corpus, resume=args.resume, metrics=MetricsWriter(args.metrics), out_path=args.out)
        print(f"pretrain complete: {args.out} (config {config_hash(config)})")
        return 0

    if args.command == "calibrate":
        config = _resolve_config(args)
        corpus = _corpus_for(args, config, "downstream")
        calibrate(config, args.checkpoint, corpus, metrics=MetricsWriter(args.metrics), out_path=args.out)
        print(f"calibration complete: {args.out}")
        return 0

    if args.command == "finetune":
        config = _resolve_config(args)
        corpus = _corpus_for(args, config, "downstream")
        run_finetune(
            config,
            args.checkpoint,
            corpus,
            metrics=MetricsWriter(args.metrics),
            coordination_log=MetricsWriter(args.coordination_log),
            out_path=args.out,
        )
        print(f"finetune complete: {args.out}")
        return 0

    if args.command == "eval":
        config = _resolve_config(args)
        checkpoint = load_checkpoint(args.checkpoint)
        bundle = checkpoint.build_bundle(seed=config.seed)
        which = "pretrain" if args.task in ("retrieval", "matching") else "downstream"
        corpus = _corpus_for(args, config, which)
        dataset = corpus.split(args.split)
        if args.task == "classification":
            result = {"accuracy": evaluate_classification(bundle, dataset, config.batch_size, checkpoint.dtype)}
        elif args.task == "matching":
            result = {"matching_accuracy": evaluate_pair_matching(bundle, dataset, checkpoint.dtype, seed=config.seed)}
        else:
            recalls = evaluate_retrieval(bundle, dataset, (1, 5, 10), checkpoint.dtype)
            result = {
                direction: {f"recall@{k}": v for k, v in values.items()} for direction, values in recalls.items()
            }
        print(json.dumps(result, indent=2))
        return 0

    if args.command == "plot":
        records = read_metrics(args.metrics)
        plot_loss_curves(records, args.out, title=args.title)
        print(f"wrote {args.out}")
        return 0

    if args.command == "ablate":
        os.makedirs(args.out_dir, exist_ok=True)
        overrides: dict = {}
        if args.steps:
            overrides["pretrain_steps"] = args.steps
        if args.noise_off:
            overrides["gradient_noise"] = False
        if args.sweep == "alpha":
            curves = run_alpha_sweep(tuple(args.alphas), seed=args.seeds[0], work_dir=args.out_dir, config_overrides=overrides)
            chart = os.path.join(args.out_dir, "alpha_sweep.png")
            plot_alpha_sweep(curves, chart)
            print(f"alpha sweep complete: {chart}")
            return 0
        rows = DESIGN_MATRIX
        if args.no_tdcalib:
            rows = tuple(r for r in rows if not r[1])
        if args.no_gmcoord:
            rows = tuple(r for r in rows if not r[2])
        result = run_design_matrix(tuple(args.seeds), args.out_dir, config_overrides=overrides, rows=rows)
        summary = result.summary()
        summary_path = os.path.join(args.out_dir, "ablation_summary.json")
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
        plot_design_matrix(summary, os.path.join(args.out_dir, "ablation.png"))
        print(json.dumps(summary["full_vs_baseline"], indent=2))
        print(f"ablation complete: {summary_path}")
        return 0

    raise ConfigurationError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    # tensors here are tiny; a single thread avoids dispatch overhead
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except DuomaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for err_type, code in EXIT_CODES:
            if isinstance(exc, err_type):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
