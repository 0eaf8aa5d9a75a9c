"""Command-line driver.

    ksm run    train a task sequence, write ledgers and artifacts
    ksm stats  inspect mask files
    ksm eval   score one mask file against a checkpoint

Exit codes: 0 success, 2 usage errors, 3 missing or corrupt data files,
4 provenance hash mismatch between checkpoint and mask.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .data import DatasetError, load_cifar, split_tasks, synthetic_tasks
from .masks import MaskHyperparams
from .model import default_backbone, compact_backbone, vgg16_bn
from .reporting import (
    ledger_csv,
    ledger_json,
    mask_layer_stats,
    overhead_summary,
    stats_csv,
    stats_table,
)
from .store import (
    HashMismatchError,
    StoreError,
    load_checkpoint,
    load_mask,
    save_checkpoint,
    save_mask,
)
from .strategies import STRATEGIES
from .training import TrainConfig, evaluate, run_sequence

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_HASH = 4

BACKBONES = {"default": default_backbone, "compact": compact_backbone, "vgg16": vgg16_bn}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksm", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a sequence of tasks")
    _dataset_flags(run)
    run.add_argument("--strategy", choices=sorted(STRATEGIES), default="ksm")
    run.add_argument("--epochs", type=int, default=10)
    run.add_argument("--batch-size", type=int, default=64)
    run.add_argument("--lr", type=float, default=1e-4)
    run.add_argument("--init-task", type=int, default=None,
                     help="task id trained first (the backbone task)")
    run.add_argument("--backbone", choices=sorted(BACKBONES), default="default")
    run.add_argument("--limit-train", type=int, default=None,
                     help="cap on training images per task")
    run.add_argument("--out", type=Path, default=Path("runs/latest"))
    run.add_argument("--no-artifacts", action="store_true",
                     help="skip writing mask and checkpoint files")

    stats = sub.add_parser("stats", help="summarize mask files")
    stats.add_argument("masks", nargs="+", type=Path)
    stats.add_argument("--csv", type=Path, default=None, help="also write a CSV summary")

    ev = sub.add_parser("eval", help="evaluate a mask file against a checkpoint")
    _dataset_flags(ev)
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--mask", type=Path, required=True)
    return parser


def _dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=("synthetic", "cifar10", "cifar100"),
                   default="synthetic")
    p.add_argument("--data-dir", type=Path, default=None,
                   help="CIFAR directory (default: the KSM_DATA_DIR environment variable)")
    p.add_argument("--tasks", type=int, default=5)
    p.add_argument("--classes-per-task", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=16,
                   help="synthetic image height and width")
    p.add_argument("--separation", type=float, default=3.0,
                   help="synthetic class separation relative to unit noise")
    p.add_argument("--train-per-class", type=int, default=100)
    p.add_argument("--test-per-class", type=int, default=40)


def _build_sequence(args):
    if args.tasks < 1 or args.classes_per_task < 1:
        raise UsageError("need at least one task and one class per task")
    if args.dataset == "synthetic":
        return synthetic_tasks(
            args.tasks,
            args.classes_per_task,
            dims=(3, args.image_size, args.image_size),
            seed=args.seed,
            separation=args.separation,
            train_per_class=args.train_per_class,
            test_per_class=args.test_per_class,
        )
    data_dir = args.data_dir or os.environ.get("KSM_DATA_DIR")
    if not data_dir:
        raise DatasetError(
            f"--dataset {args.dataset} needs --data-dir or KSM_DATA_DIR"
        )
    dataset = load_cifar(data_dir, args.dataset)
    return split_tasks(dataset, args.tasks, args.classes_per_task, args.seed)


class UsageError(Exception):
    pass


def cmd_run(args) -> int:
    seq = _build_sequence(args)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        strategy=STRATEGIES[args.strategy],
        hyper=MaskHyperparams(),
        milestones=(max(1, args.epochs // 2),) if args.epochs else (),
        max_train_per_task=args.limit_train,
    )
    image_shape = seq.dataset.image_shape
    config = BACKBONES[args.backbone](image_shape)
    result = run_sequence(seq, cfg, config, init_task=args.init_task)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "ledger.csv").write_text(ledger_csv(result.ledger))
    (out / "ledger.json").write_text(ledger_json(result.ledger, cfg.describe()))
    if not args.no_artifacts:
        save_checkpoint(result.backbone, out / "backbone.ckpt")
        for tid, artifact in sorted(result.artifacts.items()):
            if artifact.weights_ref is None:
                save_mask(artifact, out / f"task_{tid:02d}.mask")

    for tid, acc, sec in zip(result.ledger.task_ids, result.ledger.accuracies,
                             result.ledger.seconds):
        print(f"task {tid}: acc {acc:.4f}  train {sec:.1f}s")
    print(f"wrote {out}/ledger.csv and {out}/ledger.json")
    return EXIT_OK


def cmd_stats(args) -> int:
    csv_blocks = []
    for path in args.masks:
        artifact = load_mask(path)
        stats = mask_layer_stats(artifact)
        print(f"{path}:")
        print(stats_table(stats))
        summary = overhead_summary(artifact)
        print(
            f"stored bits {summary['mask_bits']}  "
            f"element-wise bits {summary['elementwise_mask_bits']}  "
            f"reduction {summary['bit_reduction']:.2f}x  "
            f"file {summary['file_bytes']} bytes"
        )
        print()
        csv_blocks.append(stats_csv(stats))
    if args.csv is not None:
        args.csv.write_text("".join(csv_blocks))
    return EXIT_OK


def cmd_eval(args) -> int:
    backbone = load_checkpoint(args.checkpoint)
    artifact = load_mask(args.mask)
    if artifact.backbone_hash is None or artifact.head_w is None:
        raise UsageError("mask file has no companion section; cannot evaluate")
    current = backbone.content_hash()
    if artifact.backbone_hash != current:
        print(
            f"hash mismatch: mask was trained against {artifact.backbone_hash[:16]}..., "
            f"checkpoint is {current[:16]}...",
            file=sys.stderr,
        )
        return EXIT_HASH
    seq = _build_sequence(args)
    result = evaluate(backbone, artifact, seq)
    print(f"task {artifact.task_id}: acc {result.accuracy:.6f}  loss {result.loss:.6f}  n {result.n}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "stats":
            return cmd_stats(args)
        if args.command == "eval":
            return cmd_eval(args)
        return EXIT_USAGE
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except HashMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DatasetError, StoreError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
