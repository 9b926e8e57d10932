"""Command-line surface: ``trinity gen | train | eval | ablate``.

Configuration comes from a JSON file (``--config``) with individual flag
overrides on top.  Exit codes are a stable contract: 0 success, 2 usage
error, 3 data error, 4 runtime error.  Relative image paths in manifests
resolve against ``--data-root`` or the TRINITY_DATA_ROOT environment
variable, falling back to the manifest's directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evaluation, fusion
from .data import (
    ToyGenConfig,
    generate_toy_dataset,
    load_manifest,
    samples_from_manifest,
)
from .errors import ConfigError, ManifestError, ValidationError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class UsageError(Exception):
    pass


def _load_json_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p} is not valid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"config file {p} must hold a JSON object")
    return obj


def _dataset_tag(path: Path, taken: set[str]) -> str:
    tag = path.parent.name if path.stem == "manifest" else path.stem
    base, k = tag, 2
    while tag in taken:
        tag = f"{base}_{k}"
        k += 1
    taken.add(tag)
    return tag


def _load_datasets(paths: list[str], size: int | None, data_root: str | None):
    datasets = {}
    taken: set[str] = set()
    for raw in paths:
        p = Path(raw)
        entries = load_manifest(p, data_root=data_root)
        datasets[_dataset_tag(p, taken)] = samples_from_manifest(
            entries, p, size=size, data_root=data_root
        )
    return datasets


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args: argparse.Namespace) -> int:
    cfg_dict = _load_json_config(args.config)
    for key in ("count", "size", "seed"):
        value = getattr(args, key)
        if value is not None:
            cfg_dict[key] = value
    try:
        cfg = ToyGenConfig(**cfg_dict)
    except TypeError as exc:
        raise UsageError(f"bad generator config: {exc}") from exc
    manifest = generate_toy_dataset(cfg, args.out)
    print(f"wrote {2 * cfg.count} images and {manifest}")
    return EXIT_OK


def _train_config(args: argparse.Namespace) -> fusion.TrainConfig:
    cfg_dict = _load_json_config(args.config)
    for key in ("lr", "batch_size", "epochs", "seed", "optimizer"):
        value = getattr(args, key)
        if value is not None:
            cfg_dict[key] = value
    try:
        return fusion.TrainConfig.from_dict(cfg_dict)
    except TypeError as exc:
        raise UsageError(f"bad training config: {exc}") from exc


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    entries = load_manifest(args.manifest, data_root=args.data_root)
    samples = samples_from_manifest(entries, args.manifest, data_root=args.data_root)
    result = fusion.train(samples, cfg)
    result.detector.save(args.out, train_config=cfg)
    print(f"checkpoint: {args.out}")
    print(f"seed: {result.seed}")
    print(f"probe loss: {result.initial_probe_loss:.6f} -> {result.final_probe_loss:.6f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    detector = fusion.Detector.load(args.checkpoint)
    try:
        grid = evaluation.default_grid(
            tuple(args.grid.split(",")) if args.grid else evaluation.GRID_COLUMNS
        )
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc
    datasets = _load_datasets(args.manifest, size=None, data_root=args.data_root)
    report, records = evaluation.evaluate_grid(
        detector.predict,
        datasets,
        grid=grid,
        checkpoint_ref=str(args.checkpoint),
        config=detector.stored_config,
    )
    evaluation.write_report(report, records, args.out)
    print(report.to_csv(), end="")
    print(f"reports written to {args.out}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    base = _train_config(args)
    plan = evaluation.AblationPlan(tuple(args.plan.split(","))) if args.plan else evaluation.AblationPlan()
    train_entries = load_manifest(args.manifest, data_root=args.data_root)
    train_samples = samples_from_manifest(train_entries, args.manifest, data_root=args.data_root)
    eval_paths = args.eval_manifest or [args.manifest]
    eval_datasets = _load_datasets(eval_paths, size=None, data_root=args.data_root)
    report, records = evaluation.run_ablation(train_samples, eval_datasets, base, plan)
    evaluation.write_report(report, records, args.out)
    print(report.to_csv(), end="")
    print(f"reports written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trinity",
        description="Train and evaluate the frequency-attention forgery detector.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate the synthetic toy dataset")
    gen.add_argument("--config", help="JSON file of generator settings")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--count", type=int, help="images per class")
    gen.add_argument("--size", type=int, help="image side length")
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="train a detector on a manifest")
    train.add_argument("--manifest", required=True)
    train.add_argument("--config", help="JSON file of training settings")
    train.add_argument("--out", required=True, help="checkpoint path")
    train.add_argument("--lr", type=float)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--optimizer", choices=fusion.OPTIMIZERS)
    train.add_argument("--data-root")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint over the perturbation grid")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", action="append", required=True, help="repeatable")
    ev.add_argument("--out", required=True, help="report directory")
    ev.add_argument("--grid", help=f"comma-separated subset of {','.join(evaluation.GRID_COLUMNS)}")
    ev.add_argument("--data-root")
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="train and score the ablation plan")
    ab.add_argument("--manifest", required=True, help="training manifest")
    ab.add_argument("--eval-manifest", action="append", help="defaults to the training manifest")
    ab.add_argument("--config", help="JSON file of base training settings")
    ab.add_argument("--plan", help=f"comma-separated subset of {','.join(evaluation.ABLATION_NAMES)}")
    ab.add_argument("--out", required=True, help="report directory")
    ab.add_argument("--lr", type=float)
    ab.add_argument("--batch-size", dest="batch_size", type=int)
    ab.add_argument("--epochs", type=int)
    ab.add_argument("--seed", type=int)
    ab.add_argument("--optimizer", choices=fusion.OPTIMIZERS)
    ab.add_argument("--data-root")
    ab.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
