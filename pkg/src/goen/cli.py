"""Command-line front door.

Subcommands: fit, calibrate, score, eval, ablate, seeds, inspect,
verify-theory, synth. Options resolve in three layers: built-in defaults,
then the JSON config file (--config), then explicit flags. The single
environment override is GOEN_OUTPUT_DIR for the report directory.

Exit codes: 0 success, 1 a verify-theory check failed, 2 input validation,
3 calibration/evaluation file leakage, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .calibration_head import (
    HEAD_MAGIC,
    LAYER_SIZES,
    TrainConfig,
    build_cue_matrix,
    head_forward_batch,
    load_head,
    save_head,
)
from .errors import (
    NUMERIC_ERRORS,
    BadMagic,
    GoenError,
    InvariantViolation,
    MissingInput,
    SameFileForCalibAndEval,
)
from .feature_store import MAGIC as FEATURE_MAGIC
from .feature_store import load_feature_file, save_feature_file
from .geometry import MODEL_MAGIC, condition_number, fit_gaussian, load_model, save_model
from .pipeline import (
    DEFAULT_RULES,
    AblationVariant,
    PipelineConfig,
    calibrate_from_sets,
    load_sets,
    render_seed_table,
    render_table,
    report_to_json,
    reports_to_json,
    run_ablation,
    run_baseline_scores,
    run_goen_sets,
    run_seeds,
    seed_summary_to_json,
)
from .scores import STACK_MAGIC, load_prob_stack
from .synthetic import (
    CHECK_ALIASES,
    check_midpoint_degradation,
    check_normalization_conditioning,
    check_posterior_recovery,
    check_score_density_agreement,
    make_fixture_suite,
)

CONFIG_DEFAULTS = {
    "train": None,
    "val": None,
    "test": None,
    "ood_eval": [],
    "hard_calib": None,
    "noise_calib": None,
    "epsilon": 1e-5,
    "learning_rate": 1e-3,
    "max_epochs": 20,
    "batch_size": 128,
    "target_id": 0.05,
    "target_ood": 0.95,
    "patience": 5,
    "seed": 42,
    "ood_mix_ratio": 0.5,
    "use_hard_ood": True,
    "compact_alpha": 0.0,
    "knn_k": 50,
    "energy_temperature": 1.0,
    "ece_bins": 15,
    "noise_count": 2000,
    "holdout_fraction": 0.1,
    "output_dir": "reports",
    "score_rules": list(DEFAULT_RULES),
    "stacks": {},
    "seeds": [42, 123, 2024, 777, 314],
    "variants": None,
}


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise MissingInput(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvariantViolation(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvariantViolation(f"config {path} must hold a JSON object")
    unknown = sorted(set(data) - set(CONFIG_DEFAULTS))
    if unknown:
        raise InvariantViolation(f"config {path} has unknown keys: {unknown}")
    return data


_FLAG_TO_KEY = {
    "train": "train",
    "val": "val",
    "test": "test",
    "ood": "ood_eval",
    "hard_calib": "hard_calib",
    "noise_calib": "noise_calib",
    "epsilon": "epsilon",
    "lr": "learning_rate",
    "epochs": "max_epochs",
    "batch": "batch_size",
    "target_id": "target_id",
    "target_ood": "target_ood",
    "patience": "patience",
    "seed": "seed",
    "mix": "ood_mix_ratio",
    "use_hard_ood": "use_hard_ood",
    "compact_alpha": "compact_alpha",
    "knn_k": "knn_k",
    "energy_t": "energy_temperature",
    "ece_bins": "ece_bins",
    "noise_count": "noise_count",
    "holdout": "holdout_fraction",
    "out_dir": "output_dir",
    "rules": "score_rules",
    "stack": "stacks",
    "seeds": "seeds",
}


def _merged_options(args) -> dict:
    """defaults <- config file <- GOEN_OUTPUT_DIR <- explicit flags."""
    opts = {k: (list(v) if isinstance(v, list) else dict(v) if isinstance(v, dict) else v)
            for k, v in CONFIG_DEFAULTS.items()}
    if getattr(args, "config", None):
        opts.update(_load_config_file(args.config))
    env_out = os.environ.get("GOEN_OUTPUT_DIR")
    if env_out:
        opts["output_dir"] = env_out
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "rules":
            opts[key] = [r.strip() for r in value.split(",") if r.strip()]
        elif flag == "seeds":
            opts[key] = [int(s) for s in value.split(",") if s.strip()]
        elif flag == "stack":
            stacks = dict(opts[key])
            for item in value:
                name, sep, path = item.partition("=")
                if not sep or not name or not path:
                    raise InvariantViolation(
                        f"--stack wants NAME=PATH, got {item!r}")
                stacks[name] = path
            opts[key] = stacks
        else:
            opts[key] = value
    return opts


def _pipeline_config(opts, require_paths: bool = True) -> PipelineConfig:
    if require_paths:
        for key in ("train", "val", "test"):
            if not opts[key]:
                raise MissingInput(
                    f"missing {key} feature file (--{key} or config key {key!r})")
    train_cfg = TrainConfig(
        learning_rate=float(opts["learning_rate"]),
        max_epochs=int(opts["max_epochs"]),
        batch_size=int(opts["batch_size"]),
        target_id=float(opts["target_id"]),
        target_ood=float(opts["target_ood"]),
        patience=int(opts["patience"]),
        seed=int(opts["seed"]),
    )
    return PipelineConfig(
        train_path=opts["train"] or "",
        val_path=opts["val"] or "",
        test_path=opts["test"] or "",
        ood_eval_paths=tuple(opts["ood_eval"]),
        hard_calib_path=opts["hard_calib"],
        noise_calib_path=opts["noise_calib"],
        epsilon=float(opts["epsilon"]),
        train_cfg=train_cfg,
        ood_mix_ratio=float(opts["ood_mix_ratio"]),
        use_hard_ood=bool(opts["use_hard_ood"]),
        compact_alpha=float(opts["compact_alpha"]),
        score_rules=tuple(opts["score_rules"]),
        knn_k=int(opts["knn_k"]),
        energy_temperature=float(opts["energy_temperature"]),
        ece_bins=int(opts["ece_bins"]),
        noise_count=int(opts["noise_count"]),
        holdout_fraction=float(opts["holdout_fraction"]),
        output_dir=str(opts["output_dir"]),
        stack_paths=tuple(sorted(opts["stacks"].items())),
    )


def _write_reports(out_dir: str, stem: str, json_text: str, table_text: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, stem + ".json"), "w", encoding="utf-8") as fh:
        fh.write(json_text)
    with open(os.path.join(out_dir, stem + ".txt"), "w", encoding="utf-8") as fh:
        fh.write(table_text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    train = load_feature_file(args.train)
    model = fit_gaussian(train, epsilon=args.epsilon)
    save_model(model, args.model_out)
    counts = ", ".join(str(int(c)) for c in model.class_counts)
    print(f"classes: {model.num_classes}")
    print(f"dim: {model.dim}")
    print(f"epsilon: {model.epsilon:g}")
    print(f"per-class counts: {counts}")
    print(f"covariance condition number: {condition_number(model.covariance):.6g}")
    print(f"model written to {args.model_out}")
    return 0


def cmd_calibrate(args) -> int:
    opts = _merged_options(args)
    cfg = _pipeline_config(opts, require_paths=False)
    if not opts["val"]:
        raise MissingInput("missing val feature file (--val or config key 'val')")
    model = load_model(args.model)
    val = load_feature_file(opts["val"])
    hard = load_feature_file(opts["hard_calib"]) if opts["hard_calib"] else None
    noise = load_feature_file(opts["noise_calib"]) if opts["noise_calib"] else None
    head, history = calibrate_from_sets(cfg, model, val, hard_calib=hard,
                                        noise_calib=noise)
    save_head(head, args.head_out)
    print(f"epochs run: {len(history.records)}")
    print(f"best epoch: {history.best_epoch} (holdout gap {history.best_gap:.4f})")
    print(f"head written to {args.head_out}")
    return 0


def cmd_score(args) -> int:
    model = load_model(args.model)
    head = load_head(args.head)
    dataset = load_feature_file(args.features)
    u = head_forward_batch(head, build_cue_matrix(model, dataset))
    text = "\n".join(repr(float(x)) for x in u) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"{len(u)} scores written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    opts = _merged_options(args)
    cfg = _pipeline_config(opts)
    sets = load_sets(cfg)
    reports = [run_goen_sets(cfg, sets)]
    if args.baselines:
        reports.extend(run_baseline_scores(cfg, sets))
    json_text = reports_to_json(reports) if len(reports) > 1 else report_to_json(reports[0])
    table_text = render_table(reports)
    _write_reports(cfg.output_dir, "report", json_text, table_text)
    sys.stdout.write(json_text if args.json else table_text)
    return 0


def _parse_variant(spec: str, cfg: PipelineConfig) -> AblationVariant:
    name, _, rest = spec.partition(":")
    if not name:
        raise InvariantViolation(f"variant spec {spec!r} has no name")
    kwargs = {"use_hard_ood": cfg.use_hard_ood,
              "ood_mix_ratio": cfg.ood_mix_ratio,
              "compact_alpha": cfg.compact_alpha}
    if rest:
        for pair in rest.split(","):
            key, sep, value = pair.partition("=")
            if not sep:
                raise InvariantViolation(f"variant option {pair!r} wants key=value")
            if key == "hard":
                kwargs["use_hard_ood"] = value.lower() in ("1", "true", "yes")
            elif key == "mix":
                kwargs["ood_mix_ratio"] = float(value)
            elif key == "alpha":
                kwargs["compact_alpha"] = float(value)
            else:
                raise InvariantViolation(f"unknown variant key {key!r}")
    return AblationVariant(name, **kwargs)


def _ablation_variants(args, opts, cfg: PipelineConfig) -> list[AblationVariant]:
    if args.variant:
        return [_parse_variant(spec, cfg) for spec in args.variant]
    if opts["variants"]:
        out = []
        for entry in opts["variants"]:
            out.append(AblationVariant(
                name=entry["name"],
                use_hard_ood=bool(entry.get("use_hard_ood", cfg.use_hard_ood)),
                ood_mix_ratio=float(entry.get("ood_mix_ratio", cfg.ood_mix_ratio)),
                compact_alpha=float(entry.get("compact_alpha", cfg.compact_alpha)),
            ))
        return out
    return [
        AblationVariant("default", use_hard_ood=cfg.use_hard_ood,
                        ood_mix_ratio=cfg.ood_mix_ratio,
                        compact_alpha=cfg.compact_alpha),
        AblationVariant("noise-only", use_hard_ood=False,
                        ood_mix_ratio=cfg.ood_mix_ratio,
                        compact_alpha=cfg.compact_alpha),
        AblationVariant("compact-0.9", use_hard_ood=cfg.use_hard_ood,
                        ood_mix_ratio=cfg.ood_mix_ratio, compact_alpha=0.9),
    ]


def cmd_ablate(args) -> int:
    opts = _merged_options(args)
    cfg = _pipeline_config(opts)
    sets = load_sets(cfg)
    variants = _ablation_variants(args, opts, cfg)
    reports = run_ablation(cfg, variants, sets)
    json_text = reports_to_json(reports)
    table_text = render_table(reports)
    _write_reports(cfg.output_dir, "ablation", json_text, table_text)
    sys.stdout.write(json_text if args.json else table_text)
    return 0


def cmd_seeds(args) -> int:
    opts = _merged_options(args)
    cfg = _pipeline_config(opts)
    sets = load_sets(cfg)
    summary = run_seeds(cfg, opts["seeds"], sets)
    json_text = seed_summary_to_json(summary)
    table_text = render_seed_table(summary)
    _write_reports(cfg.output_dir, "seeds", json_text, table_text)
    sys.stdout.write(json_text if args.json else table_text)
    return 0


def cmd_inspect(args) -> int:
    try:
        with open(args.file, "rb") as fh:
            magic = fh.read(8)
    except OSError as exc:
        raise MissingInput(f"cannot read {args.file}: {exc}") from exc
    if magic == FEATURE_MAGIC:
        fs = load_feature_file(args.file)
        print(f"feature set {fs.name!r}")
        print(f"rows: {fs.n}")
        print(f"dim: {fs.dim}")
        print(f"classes: {fs.num_classes}")
        print(f"labels: {'yes' if fs.labels is not None else 'no'}")
        print(f"logits: {'yes' if fs.logits is not None else 'no'}")
    elif magic == MODEL_MAGIC:
        model = load_model(args.file)
        print("gaussian model")
        print(f"classes: {model.num_classes}")
        print(f"dim: {model.dim}")
        print(f"epsilon: {model.epsilon:g}")
        print(f"covariance condition number: "
              f"{condition_number(model.covariance):.6g}")
    elif magic == HEAD_MAGIC:
        head = load_head(args.file)
        sizes = "-".join(str(s) for s in LAYER_SIZES)
        n_params = sum(p.size for p in head.params())
        print("calibration head")
        print(f"layers: {sizes}")
        print(f"parameters: {n_params}")
    elif magic == STACK_MAGIC:
        stack = load_prob_stack(args.file)
        print("probability stack")
        print(f"members: {stack.members}")
        print(f"rows: {stack.n}")
        print(f"classes: {stack.num_classes}")
    else:
        raise BadMagic(f"{args.file}: unrecognised magic {magic!r}")
    return 0


def cmd_verify_theory(args) -> int:
    checks = {
        "conditioning": lambda: check_normalization_conditioning(
            seed=args.seed, draws=args.draws, eig_ratio=args.eig_ratio),
        "score-density-agreement": lambda: check_score_density_agreement(
            seed=args.seed, tau_min=args.tau_min, auroc_tol=args.auroc_tol),
        "posterior-recovery": lambda: check_posterior_recovery(
            seed=args.seed, mse_max=args.mse_max),
        "midpoint-degradation": lambda: check_midpoint_degradation(
            seed=args.seed, seeds=args.midpoint_seeds, min_drop=args.min_drop,
            required_drops=args.required_drops,
            required_monotone=args.required_monotone),
    }
    if args.only:
        canonical = CHECK_ALIASES.get(args.only)
        if canonical is None:
            raise InvariantViolation(
                f"unknown check {args.only!r}; choose from "
                f"{sorted(set(CHECK_ALIASES))}")
        selected = [canonical]
    else:
        selected = list(checks)
    all_passed = True
    for name in selected:
        result = checks[name]()
        all_passed &= result.passed
        print(f"{'PASS' if result.passed else 'FAIL'} {result.name}: {result.detail}")
    return 0 if all_passed else 1


def cmd_synth(args) -> int:
    suite = make_fixture_suite(
        seed=args.seed, num_classes=args.classes, dim=args.dim,
        within_std=args.within_std, n_train_per_class=args.n_train,
        n_eval_per_class=args.n_eval, n_hard_calib=args.n_hard,
        n_hard_eval=args.n_hard, n_sphere=args.n_sphere)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = {}
    for key, fs in suite.items():
        path = os.path.join(args.out_dir, f"{key}.goenfeat")
        save_feature_file(fs, path)
        paths[key] = path
        print(f"wrote {path} ({fs.n} rows, dim {fs.dim})")
    config = {
        "train": paths["train"],
        "val": paths["val"],
        "test": paths["test"],
        "hard_calib": paths["hard_calib"],
        "ood_eval": [paths["sphere"], paths["hard_eval"]],
        "seed": args.seed,
    }
    config_path = os.path.join(args.out_dir, "goen.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {config_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_knob_flags(sub) -> None:
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--epsilon", type=float, help="covariance regulariser")
    sub.add_argument("--lr", type=float, help="head learning rate")
    sub.add_argument("--epochs", type=int, help="max head epochs")
    sub.add_argument("--batch", type=int, help="head batch size")
    sub.add_argument("--target-id", dest="target_id", type=float,
                     help="soft target for ID cues")
    sub.add_argument("--target-ood", dest="target_ood", type=float,
                     help="soft target for OOD cues")
    sub.add_argument("--patience", type=int, help="early-stopping patience")
    sub.add_argument("--seed", type=int, help="run seed")
    sub.add_argument("--mix", type=float, help="hard-OOD fraction of the calibration pool")
    sub.add_argument("--no-hard-ood", dest="use_hard_ood", action="store_const",
                     const=False, help="calibrate on noise OOD only")
    sub.add_argument("--compact-alpha", dest="compact_alpha", type=float,
                     help="pull ID training features toward class means before fitting")
    sub.add_argument("--noise-count", dest="noise_count", type=int,
                     help="generated noise rows when no noise file is given")
    sub.add_argument("--holdout", type=float, help="holdout fraction for early stopping")
    sub.add_argument("--out-dir", dest="out_dir", help="report directory")


def _add_data_flags(sub) -> None:
    sub.add_argument("--train", help="labeled ID training feature file")
    sub.add_argument("--val", help="ID validation feature file (calibration cues)")
    sub.add_argument("--test", help="ID test feature file")
    sub.add_argument("--ood", action="append", help="OOD evaluation feature file (repeatable)")
    sub.add_argument("--hard-calib", dest="hard_calib",
                     help="hard OOD calibration feature file")
    sub.add_argument("--noise-calib", dest="noise_calib",
                     help="noise OOD calibration feature file")


def _add_rule_flags(sub) -> None:
    sub.add_argument("--rules", help="comma-separated score rules")
    sub.add_argument("--knn-k", dest="knn_k", type=int, help="k for the KNN rule")
    sub.add_argument("--energy-t", dest="energy_t", type=float,
                     help="temperature for the energy rule")
    sub.add_argument("--ece-bins", dest="ece_bins", type=int, help="ECE bin count")
    sub.add_argument("--stack", action="append",
                     help="NAME=PATH probability stack for ensemble rules (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="goen",
        description="Gaussian OOD scoring with a calibrated uncertainty head")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("fit", help="fit the Gaussian density on labeled features")
    p.add_argument("--train", required=True, help="labeled feature file")
    p.add_argument("--model-out", dest="model_out", required=True,
                   help="output model file")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("calibrate", help="train the uncertainty head")
    p.add_argument("--model", required=True, help="fitted model file")
    p.add_argument("--head-out", dest="head_out", required=True,
                   help="output head file")
    _add_data_flags(p)
    _add_knob_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = subs.add_parser("score", help="score a feature file with a trained head")
    p.add_argument("--model", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="write one score per line here instead of stdout")
    p.set_defaults(func=cmd_score)

    p = subs.add_parser("eval", help="full run: fit, calibrate, score, evaluate")
    _add_data_flags(p)
    _add_knob_flags(p)
    _add_rule_flags(p)
    p.add_argument("--baselines", action="store_true",
                   help="also evaluate every enabled post-hoc rule")
    p.add_argument("--json", action="store_true",
                   help="print the JSON report instead of the table")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("ablate", help="run the knob-sweep variants")
    _add_data_flags(p)
    _add_knob_flags(p)
    _add_rule_flags(p)
    p.add_argument("--variant", action="append",
                   help="NAME[:hard=BOOL,mix=R,alpha=R] (repeatable)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("seeds", help="repeat the run across seeds; mean and std")
    _add_data_flags(p)
    _add_knob_flags(p)
    _add_rule_flags(p)
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_seeds)

    p = subs.add_parser("inspect", help="describe any engine file by its magic")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)

    p = subs.add_parser("verify-theory", help="run the analytical checks")
    p.add_argument("--only", help="run one check (name or alias)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=20,
                   help="conditioning: number of seeded draws")
    p.add_argument("--eig-ratio", dest="eig_ratio", type=float, default=100.0,
                   help="conditioning: eigenvalue ratio of the generator")
    p.add_argument("--tau-min", dest="tau_min", type=float, default=0.95,
                   help="agreement: minimum Kendall tau")
    p.add_argument("--auroc-tol", dest="auroc_tol", type=float, default=0.01,
                   help="agreement: maximum AUROC gap")
    p.add_argument("--mse-max", dest="mse_max", type=float, default=0.05,
                   help="posterior recovery: maximum grid MSE")
    p.add_argument("--min-drop", dest="min_drop", type=float, default=0.05,
                   help="midpoint: required AUROC drop, widest vs tightest")
    p.add_argument("--required-drops", dest="required_drops", type=int, default=18)
    p.add_argument("--required-monotone", dest="required_monotone", type=int,
                   default=18)
    p.add_argument("--midpoint-seeds", dest="midpoint_seeds", type=int, default=20)
    p.set_defaults(func=cmd_verify_theory)

    p = subs.add_parser("synth", help="write a synthetic fixture suite and config")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--within-std", dest="within_std", type=float, default=0.15)
    p.add_argument("--n-train", dest="n_train", type=int, default=200,
                   help="training rows per class")
    p.add_argument("--n-eval", dest="n_eval", type=int, default=200,
                   help="val/test rows per class")
    p.add_argument("--n-hard", dest="n_hard", type=int, default=1000,
                   help="hard OOD rows (calibration and evaluation each)")
    p.add_argument("--n-sphere", dest="n_sphere", type=int, default=1000)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SameFileForCalibAndEval as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except GoenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
