"""Command-line surface: curves, gen, train, eval, verify.

Every command is a deterministic function of its arguments, the config file,
and the seeds.  Report paths write a CSV plus a rendered PNG next to it.
Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import figures, verify
from .config import DatasetPaths, ExperimentConfig, load_experiment
from .datasets import (
    Dataset,
    KIND_CLASSIFICATION,
    eval_dataset,
    gen_classification_pair,
    gen_segmentation_pair,
    read_dataset,
    with_seed,
    write_dataset,
)
from .errors import ConfigError, DomainError, MaxSquareError
from .losses import (
    binary_entropy_grad,
    binary_maxsquare_grad,
    binary_scaled_entropy_grad,
)
from .metrics import accuracy, class_report, emit_report
from .models import (
    MlpSpec,
    SegNetSpec,
    infer_spec,
    load_params,
    mlp_forward,
    save_params,
    seg_forward,
)
from .training import (
    adapt,
    confidence_split,
    pretrain_source,
    with_train_seed,
    write_loss_log,
)


def _curve_grid(step: float) -> np.ndarray:
    if not (0.0 < step <= 0.1):
        raise DomainError(f"step must be in (0, 0.1], got {step}")
    count = int(np.floor(0.5 / step + 1e-12)) - 1
    return 0.5 + step * np.arange(1, count + 1)


def cmd_curves(gamma: float, step: float, out_dir: str) -> None:
    """Emit the binary gradient-magnitude curves as CSV plus a figure."""
    grid = _curve_grid(step)
    ent = binary_entropy_grad(grid)
    msq = binary_maxsquare_grad(grid)
    sca = binary_scaled_entropy_grad(grid, gamma)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "curves.csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write("p,grad_entropy,grad_maxsquare,grad_scaled_entropy\n")
        for row in zip(grid, ent, msq, sca):
            fh.write(",".join(f"{v:.9f}" for v in row) + "\n")
    figures.render_curves(grid, ent, msq, sca, gamma, os.path.join(out_dir, "curves.png"))
    print(f"wrote {csv_path} ({grid.size} rows) and curves.png")


def _generate_pair(cfg: ExperimentConfig, seed=None):
    """Domain pair for one run; ``seed`` reseeds a generator-backed dataset."""
    if isinstance(cfg.dataset, DatasetPaths):
        source = read_dataset(cfg.dataset.source)
        target = read_dataset(cfg.dataset.target)
        if cfg.dataset.target_eval is not None:
            held_out = read_dataset(cfg.dataset.target_eval)
            if len(held_out) != len(target):
                raise ConfigError("target_eval sample count differs from target")
            target.eval_labels = held_out.labels
        return source, target
    spec = cfg.dataset if seed is None else with_seed(cfg.dataset, seed)
    if cfg.kind == KIND_CLASSIFICATION:
        return gen_classification_pair(spec)
    return gen_segmentation_pair(spec)


def cmd_gen(cfg: ExperimentConfig, out_dir: str) -> None:
    """Generate a domain pair and write source/target/target_eval UDS1 files."""
    if isinstance(cfg.dataset, DatasetPaths):
        raise ConfigError("gen requires a dataset.generator section, not paths")
    source, target = _generate_pair(cfg)
    os.makedirs(out_dir, exist_ok=True)
    write_dataset(source, os.path.join(out_dir, "source.uds"))
    write_dataset(target, os.path.join(out_dir, "target.uds"))
    write_dataset(eval_dataset(target), os.path.join(out_dir, "target_eval.uds"))
    print(
        f"wrote source.uds ({len(source)} samples), target.uds and "
        f"target_eval.uds ({len(target)} samples) to {out_dir}"
    )


def _model_spec(cfg: ExperimentConfig, source: Dataset):
    if cfg.kind == KIND_CLASSIFICATION:
        return MlpSpec(
            input_dim=source.features.shape[1],
            hidden_dims=cfg.model.hidden_dims,
            num_classes=source.num_classes,
        )
    return SegNetSpec(
        in_channels=source.features.shape[1],
        trunk_channels=cfg.model.trunk_channels,
        trunk_depth=cfg.model.trunk_depth,
        num_classes=source.num_classes,
        tap_depth=cfg.model.tap_depth,
    )


def _predict(spec, params, dataset: Dataset):
    """Probability rows plus per-sample (or per-pixel) predicted labels."""
    if isinstance(spec, MlpSpec):
        probs = mlp_forward(spec, params, dataset.features).array
        return probs, probs.argmax(axis=1)
    chunks = []
    for i in range(len(dataset)):
        m = seg_forward(spec, params, dataset.features[i : i + 1])
        chunks.append(m.final.array)
    probs = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, dataset.num_classes))
    return probs, probs.argmax(axis=1)


def _evaluate_to_files(spec, params, dataset: Dataset, out_dir: str, stem: str = "report"):
    probs, pred = _predict(spec, params, dataset)
    truth = np.asarray(dataset.labels).reshape(-1)
    report = class_report(pred, truth, probs, dataset.num_classes)
    extra = []
    accuracies = None
    if dataset.kind == KIND_CLASSIFICATION:
        top, bottom = confidence_split(probs, 0.3)
        overall = accuracy(pred, truth)
        top_acc = accuracy(pred[top], truth[top])
        bottom_acc = accuracy(pred[bottom], truth[bottom])
        extra = [
            ("accuracy", overall),
            ("accuracy_top30", top_acc),
            ("accuracy_bottom30", bottom_acc),
        ]
        accuracies = {"overall": overall or 0.0, "top 30%": top_acc or 0.0,
                      "bottom 30%": bottom_acc or 0.0}
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    emit_report(report, csv_path, extra_rows=extra)
    figures.render_report(report, os.path.join(out_dir, f"{stem}.png"), accuracies)
    return report


def cmd_train(cfg: ExperimentConfig) -> None:
    """Pretrain, adapt, and write checkpoint + loss log + report per seed.

    With a generator-backed dataset each run seed re-seeds the generator too,
    so seeds are fully independent replicas of the experiment.
    """
    spec = None
    for seed in cfg.repeat_seeds:
        run_dir = os.path.join(cfg.out_dir, f"seed_{seed}")
        os.makedirs(run_dir, exist_ok=True)
        train_cfg = with_train_seed(cfg.train, seed)
        src, tgt = _generate_pair(cfg, seed)
        if spec is None:
            spec = _model_spec(cfg, src)
        params = pretrain_source(spec, src, train_cfg)
        params, log = adapt(spec, params, src, tgt.features, train_cfg)
        save_params(params, os.path.join(run_dir, "checkpoint.msqp"))
        write_loss_log(log, os.path.join(run_dir, "loss_log.csv"))
        if log:
            figures.render_loss_log(log, os.path.join(run_dir, "loss_curve.png"))
        wrote_report = tgt.eval_labels is not None
        if wrote_report:
            _evaluate_to_files(spec, params, eval_dataset(tgt), run_dir)
        suffix = "report" if wrote_report else "no report (target labels unavailable)"
        print(f"seed {seed}: wrote checkpoint, loss log and {suffix} in {run_dir}")


def cmd_eval(checkpoint: str, dataset_path: str, out_dir: str) -> None:
    """Evaluate a checkpoint against a labeled UDS1 file."""
    params = load_params(checkpoint)
    spec = infer_spec(params)
    dataset = read_dataset(dataset_path)
    if dataset.num_classes != spec.num_classes:
        raise ConfigError(
            f"checkpoint has {spec.num_classes} classes but dataset has "
            f"{dataset.num_classes}"
        )
    os.makedirs(out_dir, exist_ok=True)
    report = _evaluate_to_files(spec, params, dataset, out_dir)
    miou = "undefined" if report.miou is None else f"{report.miou:.6f}"
    print(f"wrote report.csv and report.png to {out_dir} (mIoU {miou})")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    train = cfg.train
    updates = {}
    for flag, field in (
        ("loss", "loss"), ("gamma", "gamma"), ("alpha", "alpha"),
        ("delta", "delta"), ("lambda_t", "lambda_t"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            updates[field] = value
    if getattr(args, "multi", False):
        updates["multi_level"] = True
    if updates:
        train = replace(train, **updates)
    out_dir = args.out if getattr(args, "out", None) else cfg.out_dir
    seeds = (args.seed,) if getattr(args, "seed", None) is not None else cfg.repeat_seeds
    return replace(cfg, train=train, out_dir=out_dir, repeat_seeds=seeds)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxsquare",
        description="Desk-scale UDA lab around squared-probability target losses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    curves = sub.add_parser("curves", help="emit binary gradient-magnitude curves")
    curves.add_argument("--gamma", type=float, default=0.1)
    curves.add_argument("--step", type=float, default=0.005)
    curves.add_argument("--out", default="curves_out")

    gen = sub.add_parser("gen", help="generate a domain pair as UDS1 files")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", default=None)

    train = sub.add_parser("train", help="pretrain + adapt per seed from a config")
    train.add_argument("--config", required=True)
    train.add_argument("--out", default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--loss", choices=("entropy", "scaled", "maxsquare", "maxsquare_iw"))
    train.add_argument("--multi", action="store_true")
    train.add_argument("--gamma", type=float, default=None)
    train.add_argument("--alpha", type=float, default=None)
    train.add_argument("--delta", type=float, default=None)
    train.add_argument("--lambda-t", dest="lambda_t", type=float, default=None)

    evaluate = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--out", default="eval_out")

    sub.add_parser("verify", help="run the property self-check suite")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "curves":
            cmd_curves(args.gamma, args.step, args.out)
        elif args.command == "gen":
            cfg = load_experiment(args.config)
            cmd_gen(cfg, args.out if args.out else cfg.out_dir)
        elif args.command == "train":
            cfg = _apply_overrides(load_experiment(args.config), args)
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(args.checkpoint, args.dataset, args.out)
        elif args.command == "verify":
            return verify.run_all()
    except (ConfigError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MaxSquareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
