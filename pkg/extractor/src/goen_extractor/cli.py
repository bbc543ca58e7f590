"""Command line: train the backbone, extract features, export everything.

Exports are plain engine feature files; the engine config written by
export-all points at them so an end-to-end evaluation is one command on
the other side.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import torch

from . import data
from .export import ExportRun, extract_features
from .model import MultiScaleResNet, load_checkpoint
from .train import TrainSettings, train_backbone

NOISE_EVAL_COUNT = 5_000
NOISE_CALIB_COUNT = 2_000

ID_SETS = ("cifar10_train", "cifar10_val", "cifar10_test")
OOD_SETS = ("svhn_calib", "svhn_eval", "cifar100", "noise")
ALL_SETS = ID_SETS + OOD_SETS


def _device(flag: str | None) -> str:
    if flag:
        return flag
    return "cuda" if torch.cuda.is_available() else "cpu"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", default="data", help="dataset cache directory")
    p.add_argument("--seed", type=int, default=42, help="split/init/noise seed")
    p.add_argument("--device", default=None, help="cpu or cuda (default: auto)")
    p.add_argument("--no-download", action="store_true",
                   help="fail instead of downloading missing datasets")


def _cmd_train(args) -> int:
    device = _device(args.device)
    settings = TrainSettings(epochs=args.epochs, center_loss=args.center_loss,
                             patience=args.patience, seed=args.seed)
    train_aug, _, val, _ = data.cifar10_splits(args.data_dir, args.seed,
                                               download=not args.no_download)
    train_loader = data.loader(train_aug, batch_size=args.batch,
                               shuffle=True, seed=args.seed)
    val_loader = data.loader(val)
    model = MultiScaleResNet(num_classes=10)
    history = train_backbone(model, train_loader, val_loader, settings,
                             device=device, checkpoint_path=args.checkpoint)
    best = min(history, key=lambda h: h["val_loss"])
    print(f"best epoch {best['epoch']}: val loss {best['val_loss']:.4f}")
    print(f"checkpoint written to {args.checkpoint}")
    return 0


def _dataset_for(name: str, args):
    dl = not args.no_download
    if name.startswith("cifar10_"):
        _, train_plain, val, test = data.cifar10_splits(args.data_dir, args.seed,
                                                        download=dl)
        return {"cifar10_train": train_plain, "cifar10_val": val,
                "cifar10_test": test}[name]
    if name.startswith("svhn_"):
        calib, evl = data.svhn_splits(args.data_dir, args.seed, download=dl)
        return calib if name == "svhn_calib" else evl
    if name == "cifar100":
        return data.FilteredCifar100(args.data_dir, download=dl)
    if name == "noise":
        return data.NoiseDataset(args.noise_count, args.seed)
    raise ValueError(f"unknown set {name!r}; choose from {', '.join(ALL_SETS)}")


def _export_sets(model: MultiScaleResNet, names, args, run: ExportRun,
                 device: str) -> None:
    for name in names:
        dataset = _dataset_for(name, args)
        try:
            feats, labels, logits = extract_features(
                model, data.loader(dataset), device=device,
                mode=args.features, keep_labels=name in ID_SETS)
        except Exception as exc:
            raise RuntimeError(f"extracting {name} "
                               f"({len(dataset)} images): {exc}") from exc
        path = run.write(name, feats, model.num_classes,
                         labels=labels, logits=logits)
        print(f"wrote {path} ({feats.shape[0]} rows, dim {feats.shape[1]})")


def _cmd_extract(args) -> int:
    device = _device(args.device)
    model, _ = load_checkpoint(args.checkpoint)
    names = [s.strip() for s in args.sets.split(",") if s.strip()]
    for name in names:
        if name not in ALL_SETS:
            print(f"error: unknown set {name!r}; choose from "
                  f"{', '.join(ALL_SETS)}", file=sys.stderr)
            return 2
    _export_sets(model, names, args, ExportRun(args.out_dir), device)
    return 0


def _cmd_export_all(args) -> int:
    device = _device(args.device)
    model, _ = load_checkpoint(args.checkpoint)
    run = ExportRun(args.out_dir)
    _export_sets(model, ID_SETS + ("svhn_calib", "svhn_eval", "cifar100"),
                 args, run, device)

    # two noise files: a large evaluation set and a small calibration set
    for name, count in (("noise_eval", NOISE_EVAL_COUNT),
                        ("noise_calib", NOISE_CALIB_COUNT)):
        dataset = data.NoiseDataset(count, args.seed)
        feats, _, logits = extract_features(model, data.loader(dataset),
                                            device=device, mode=args.features,
                                            keep_labels=False)
        path = run.write(name, feats, model.num_classes, logits=logits)
        print(f"wrote {path} ({feats.shape[0]} rows, dim {feats.shape[1]})")

    config = {
        "train": os.path.join(args.out_dir, "cifar10_train.goenfeat"),
        "val": os.path.join(args.out_dir, "cifar10_val.goenfeat"),
        "test": os.path.join(args.out_dir, "cifar10_test.goenfeat"),
        "ood_eval": [os.path.join(args.out_dir, f"{n}.goenfeat")
                     for n in ("svhn_eval", "cifar100", "noise_eval")],
        "hard_calib": os.path.join(args.out_dir, "svhn_calib.goenfeat"),
        "noise_calib": os.path.join(args.out_dir, "noise_calib.goenfeat"),
        "seed": args.seed,
    }
    config_path = os.path.join(args.out_dir, "goen.json")
    with open(config_path, "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {config_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="goen-extract",
        description="multi-scale feature extraction for the goen engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the backbone on CIFAR-10")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch", type=int, default=data.TRAIN_BATCH)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--center-loss", action="store_true",
                   help="add the compactness regulariser (ablation mode)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("extract", help="export chosen sets as feature files")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sets", required=True,
                   help=f"comma-separated from: {', '.join(ALL_SETS)}")
    p.add_argument("--features", choices=("projected", "concat640"),
                   default="projected", help="exported representation")
    p.add_argument("--noise-count", type=int, default=NOISE_EVAL_COUNT)
    p.set_defaults(fn=_cmd_extract)

    p = sub.add_parser("export-all",
                       help="export every set the engine needs, plus a config")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--features", choices=("projected", "concat640"),
                   default="projected")
    p.set_defaults(fn=_cmd_export_all)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
