"""End-to-end orchestration: density fitting, head calibration, scoring,
baseline sweeps, ablations, seed studies, and report rendering.

One run fits the Gaussian density on labeled ID training features, builds
calibration cues from ID validation features plus a mixed OOD pool (provided
hard OOD and generated or provided noise), trains the head, scores the ID
test set and every OOD evaluation set, and aggregates the metric suite into
an EvalReport. Reports serialise to deterministic JSON and to aligned text
tables with metrics as rows and variants as columns.

Calibration inputs are guarded against file-identity leakage: a file used
for calibration may never reappear as an evaluation file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .calibration_head import (
    TrainConfig,
    build_cue_matrix,
    head_forward_batch,
    train_head,
)
from .errors import (
    DegenerateInput,
    InvariantViolation,
    MissingInput,
    MissingLabels,
    MissingLogits,
    SameFileForCalibAndEval,
)
from .feature_store import FeatureSet, load_feature_file
from .geometry import fit_gaussian, min_mahalanobis_rows, normalize_rows
from .metrics import IDEval, OODEval, evaluate_id, evaluate_ood
from .rng import Xorshift64Star
from .scores import (
    ProbStack,
    energy_rows,
    ensemble_variance_rows,
    entropy_rows,
    fit_temperature,
    gate_rows,
    knn_scores,
    load_prob_stack,
    max_softmax_rows,
    mutual_information_rows,
    softmax_rows,
    vacuity_rows,
)
from .synthetic import (
    attach_nearest_mean_logits,
    compact_features,
    gen_noise_images_features,
)

BASELINE_RULES = (
    "max_softmax",
    "entropy",
    "energy",
    "temp_scaled",
    "mahalanobis",
    "knn",
    "vacuity",
    "mutual_information",
    "ensemble_variance",
    "gate",
)

# rules that need no auxiliary probability-stack file
DEFAULT_RULES = (
    "max_softmax",
    "entropy",
    "energy",
    "temp_scaled",
    "mahalanobis",
    "knn",
    "vacuity",
)

_STACK_RULES = frozenset({"mutual_information", "ensemble_variance", "gate"})


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one run needs: file paths plus every tunable.

    stack_paths maps feature-set names (the name stored inside the feature
    file) to probability-stack files for the ensemble-style rules.
    """

    train_path: str
    val_path: str
    test_path: str
    ood_eval_paths: tuple[str, ...] = ()
    hard_calib_path: str | None = None
    noise_calib_path: str | None = None
    epsilon: float = 1e-5
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    ood_mix_ratio: float = 0.5
    use_hard_ood: bool = True
    compact_alpha: float = 0.0
    score_rules: tuple[str, ...] = DEFAULT_RULES
    knn_k: int = 50
    energy_temperature: float = 1.0
    ece_bins: int = 15
    noise_count: int = 2000
    holdout_fraction: float = 0.1
    output_dir: str = "reports"
    stack_paths: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not (0.0 <= self.ood_mix_ratio <= 1.0):
            raise InvariantViolation(
                f"ood_mix_ratio must be in [0, 1], got {self.ood_mix_ratio}")
        if not (0.0 <= self.compact_alpha <= 1.0):
            raise InvariantViolation(
                f"compact_alpha must be in [0, 1], got {self.compact_alpha}")
        if not (0.0 < self.holdout_fraction <= 0.5):
            raise InvariantViolation(
                f"holdout_fraction must be in (0, 0.5], got {self.holdout_fraction}")
        if self.noise_count < 1:
            raise InvariantViolation(f"noise_count must be >= 1, got {self.noise_count}")
        if self.knn_k < 1:
            raise InvariantViolation(f"knn_k must be >= 1, got {self.knn_k}")
        if not (self.energy_temperature > 0):
            raise InvariantViolation(
                f"energy_temperature must be > 0, got {self.energy_temperature}")
        if self.ece_bins < 1:
            raise InvariantViolation(f"ece_bins must be >= 1, got {self.ece_bins}")
        unknown = [r for r in self.score_rules if r not in BASELINE_RULES]
        if unknown:
            raise InvariantViolation(f"unknown score rules: {unknown}")
        object.__setattr__(self, "ood_eval_paths", tuple(self.ood_eval_paths))
        object.__setattr__(self, "score_rules", tuple(self.score_rules))
        object.__setattr__(self, "stack_paths", tuple(
            (str(k), str(v)) for k, v in self.stack_paths))

    @property
    def seed(self) -> int:
        return self.train_cfg.seed

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(
            self, train_cfg=dataclasses.replace(self.train_cfg, seed=seed))


@dataclass(frozen=True)
class EvalReport:
    """Metric bundle for one run; the average AUROC is always recomputed."""

    variant: str
    seed: int
    id_eval: IDEval | None
    ood_evals: tuple[tuple[str, OODEval], ...]
    average_auroc: float | None = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ood_evals", tuple(self.ood_evals))
        if self.ood_evals:
            avg = float(np.mean([e.auroc for _, e in self.ood_evals]))
        else:
            avg = None
        object.__setattr__(self, "average_auroc", avg)

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "id": None if self.id_eval is None else self.id_eval.as_dict(),
            "ood": {name: ev.as_dict() for name, ev in self.ood_evals},
            "average_auroc": self.average_auroc,
        }

    def flat_metrics(self) -> dict[str, float]:
        """One flat name -> value map, for seed aggregation."""
        out: dict[str, float] = {}
        if self.id_eval is not None:
            for key, val in self.id_eval.as_dict().items():
                out[f"id.{key}"] = val
        for name, ev in self.ood_evals:
            for key, val in ev.as_dict().items():
                out[f"ood.{name}.{key}"] = val
        if self.average_auroc is not None:
            out["average_auroc"] = self.average_auroc
        return out


@dataclass(frozen=True)
class AblationVariant:
    """One knob setting for the ablation sweep."""

    name: str
    use_hard_ood: bool = True
    ood_mix_ratio: float = 0.5
    compact_alpha: float = 0.0


@dataclass(frozen=True)
class SeedSummary:
    """Per-metric mean and sample standard deviation over seeds."""

    seeds: tuple[int, ...]
    reports: tuple[EvalReport, ...]
    mean: dict[str, float]
    std: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "mean": dict(self.mean),
            "std": dict(self.std),
            "runs": [r.as_dict() for r in self.reports],
        }


@dataclass(frozen=True)
class LoadedSets:
    """The feature sets one run consumes, resolved from files or built in tests."""

    train: FeatureSet
    val: FeatureSet
    test: FeatureSet
    eval_ood: tuple[FeatureSet, ...] = ()
    hard_calib: FeatureSet | None = None
    noise_calib: FeatureSet | None = None


def guard_distinct_files(calib_paths, eval_paths) -> None:
    """Refuse any calibration file that reappears as an evaluation file.

    Identity is by os.path.realpath, so symlinked duplicates are caught;
    content-level overlap between distinct files is out of scope.
    """
    eval_real = {os.path.realpath(p) for p in eval_paths}
    for path in calib_paths:
        if path is not None and os.path.realpath(path) in eval_real:
            raise SameFileForCalibAndEval(
                f"{path} is used for calibration and evaluation")


def load_sets(cfg: PipelineConfig) -> LoadedSets:
    """Load every referenced feature file, enforcing the leakage guard first."""
    guard_distinct_files(
        [cfg.hard_calib_path, cfg.noise_calib_path], cfg.ood_eval_paths)
    return LoadedSets(
        train=load_feature_file(cfg.train_path),
        val=load_feature_file(cfg.val_path),
        test=load_feature_file(cfg.test_path),
        eval_ood=tuple(load_feature_file(p) for p in cfg.ood_eval_paths),
        hard_calib=(load_feature_file(cfg.hard_calib_path)
                    if cfg.hard_calib_path else None),
        noise_calib=(load_feature_file(cfg.noise_calib_path)
                     if cfg.noise_calib_path else None),
    )


def _draw_rows(rng: Xorshift64Star, rows: np.ndarray, count: int) -> np.ndarray:
    """A `count`-row sample: a subset when the pool suffices, else with replacement."""
    n = rows.shape[0]
    if n >= count:
        idx = rng.permutation(n)[:count]
    else:
        idx = rng.choice(n, count)
    return rows[idx]


def _carve_holdout(rng: Xorshift64Star, rows: np.ndarray,
                   fraction: float) -> tuple[np.ndarray, np.ndarray]:
    n = rows.shape[0]
    n_hold = max(1, int(round(fraction * n)))
    if n_hold >= n:
        raise DegenerateInput(
            f"cue pool of {n} rows cannot spare a holdout of {n_hold}")
    perm = rng.permutation(n)
    return rows[perm[n_hold:]], rows[perm[:n_hold]]


def calibrate_from_sets(cfg: PipelineConfig, model, val: FeatureSet,
                        hard_calib: FeatureSet | None = None,
                        noise_calib: FeatureSet | None = None):
    """Build cue pools and train the head against a fitted model.

    Noise calibration cues come from noise_calib when present, else from
    generated clipped-Gaussian features with surrogate nearest-mean logits.
    The OOD cue pool matches the ID pool in size, with round(mix * size) hard
    cues when hard OOD participates; holdout_fraction of each pool (at least
    one cue) is held out for early stopping. Returns (head, history).
    """
    rng = Xorshift64Star(cfg.seed)
    id_cues = build_cue_matrix(model, val)
    hard_cues = None
    if cfg.use_hard_ood and hard_calib is not None:
        hard_cues = build_cue_matrix(model, hard_calib)
    if noise_calib is None:
        noise_calib = gen_noise_images_features(
            cfg.noise_count, model.dim, seed=rng.next_u64())
        noise_calib = attach_nearest_mean_logits(noise_calib, model.means)
    noise_cues = build_cue_matrix(model, noise_calib)

    pool = id_cues.shape[0]
    n_hard = int(round(cfg.ood_mix_ratio * pool)) if hard_cues is not None else 0
    parts = []
    if n_hard > 0:
        parts.append(_draw_rows(rng, hard_cues, n_hard))
    if pool - n_hard > 0:
        parts.append(_draw_rows(rng, noise_cues, pool - n_hard))
    ood_cues = np.vstack(parts)

    id_train, id_hold = _carve_holdout(rng, id_cues, cfg.holdout_fraction)
    ood_train, ood_hold = _carve_holdout(rng, ood_cues, cfg.holdout_fraction)
    return train_head(id_train, ood_train, id_hold, ood_hold, cfg.train_cfg)


def run_goen_sets(cfg: PipelineConfig, sets: LoadedSets,
                  variant: str = "goen") -> EvalReport:
    """The full flow on already-loaded sets. See run_goen for the file version."""
    train = sets.train
    if cfg.compact_alpha > 0.0:
        train = compact_features(train, cfg.compact_alpha)
    model = fit_gaussian(train, epsilon=cfg.epsilon)
    head, _ = calibrate_from_sets(cfg, model, sets.val,
                                  hard_calib=sets.hard_calib,
                                  noise_calib=sets.noise_calib)

    u_id = head_forward_batch(head, build_cue_matrix(model, sets.test))
    ood_evals = []
    for ood_set in sets.eval_ood:
        u_ood = head_forward_batch(head, build_cue_matrix(model, ood_set))
        ood_evals.append((ood_set.name, evaluate_ood(u_id, u_ood)))

    id_eval = None
    if sets.test.labels is not None and sets.test.logits is not None:
        id_eval = evaluate_id(softmax_rows(sets.test.logits), sets.test.labels,
                              n_bins=cfg.ece_bins)
    return EvalReport(variant=variant, seed=cfg.seed, id_eval=id_eval,
                      ood_evals=tuple(ood_evals))


def run_goen(cfg: PipelineConfig, variant: str = "goen") -> EvalReport:
    """Fit, calibrate, score, and evaluate from the configured files."""
    return run_goen_sets(cfg, load_sets(cfg), variant=variant)


def _load_stacks(cfg: PipelineConfig) -> dict[str, ProbStack]:
    return {name: load_prob_stack(path) for name, path in cfg.stack_paths}


def _stack_for(stacks: dict[str, ProbStack], rule: str,
               dataset: FeatureSet) -> ProbStack:
    stack = stacks.get(dataset.name)
    if stack is None:
        raise MissingInput(
            f"rule {rule!r} needs a probability stack for set {dataset.name!r}")
    if stack.n != dataset.n:
        raise MissingInput(
            f"stack for {dataset.name!r} has {stack.n} rows, set has {dataset.n}")
    return stack


def _require_logits(dataset: FeatureSet, rule: str) -> np.ndarray:
    if dataset.logits is None:
        raise MissingLogits(f"rule {rule!r} needs logits on set {dataset.name!r}")
    return np.asarray(dataset.logits, dtype=np.float64)


def run_baseline_scores(cfg: PipelineConfig, sets: LoadedSets | None = None,
                        stacks: dict[str, ProbStack] | None = None,
                        ) -> list[EvalReport]:
    """Every enabled post-hoc rule, each as its own EvalReport.

    All rules share the unified convention (higher = more OOD) and are
    evaluated on the same ID test set and OOD evaluation sets. ID prediction
    metrics appear only for rules that yield class probabilities: raw and
    temperature-scaled softmax, and stack rules via the member mean.
    """
    if sets is None:
        sets = load_sets(cfg)
    if stacks is None:
        stacks = _load_stacks(cfg)
    test = sets.test
    all_sets = [test, *sets.eval_ood]

    model = None
    train_normed = None
    fitted_t = None
    reports: list[EvalReport] = []
    for rule in cfg.score_rules:
        if rule in ("mahalanobis",) and model is None:
            model = fit_gaussian(sets.train, epsilon=cfg.epsilon)
        if rule == "knn" and train_normed is None:
            train_normed = normalize_rows(
                np.asarray(sets.train.features, dtype=np.float64))
        if rule == "temp_scaled" and fitted_t is None:
            if sets.val.labels is None:
                raise MissingLabels(
                    "temperature fitting needs labels on the validation set")
            fitted_t = fit_temperature(_require_logits(sets.val, rule),
                                       sets.val.labels)

        per_set: dict[str, np.ndarray] = {}
        for ds in all_sets:
            if rule == "max_softmax":
                per_set[ds.name] = max_softmax_rows(
                    softmax_rows(_require_logits(ds, rule)))
            elif rule == "entropy":
                per_set[ds.name] = entropy_rows(
                    softmax_rows(_require_logits(ds, rule)))
            elif rule == "energy":
                per_set[ds.name] = energy_rows(
                    _require_logits(ds, rule), cfg.energy_temperature)
            elif rule == "temp_scaled":
                per_set[ds.name] = max_softmax_rows(
                    softmax_rows(_require_logits(ds, rule), fitted_t))
            elif rule == "mahalanobis":
                per_set[ds.name] = min_mahalanobis_rows(model, ds.features)
            elif rule == "knn":
                per_set[ds.name] = knn_scores(train_normed, ds.features,
                                              cfg.knn_k)
            elif rule == "vacuity":
                per_set[ds.name] = vacuity_rows(_require_logits(ds, rule))
            elif rule == "mutual_information":
                per_set[ds.name] = mutual_information_rows(
                    _stack_for(stacks, rule, ds))
            elif rule == "ensemble_variance":
                per_set[ds.name] = ensemble_variance_rows(
                    _stack_for(stacks, rule, ds))
            elif rule == "gate":
                per_set[ds.name] = gate_rows(_stack_for(stacks, rule, ds))

        ood_evals = tuple(
            (ds.name, evaluate_ood(per_set[test.name], per_set[ds.name]))
            for ds in sets.eval_ood)

        id_eval = None
        if test.labels is not None:
            if rule == "max_softmax":
                id_eval = evaluate_id(softmax_rows(_require_logits(test, rule)),
                                      test.labels, n_bins=cfg.ece_bins)
            elif rule == "temp_scaled":
                id_eval = evaluate_id(
                    softmax_rows(_require_logits(test, rule), fitted_t),
                    test.labels, n_bins=cfg.ece_bins)
            elif rule in ("mutual_information", "ensemble_variance"):
                stack = stacks.get(test.name)
                if stack is not None and stack.n == test.n:
                    id_eval = evaluate_id(stack.probs.mean(axis=0), test.labels,
                                          n_bins=cfg.ece_bins)
        reports.append(EvalReport(variant=rule, seed=cfg.seed,
                                  id_eval=id_eval, ood_evals=ood_evals))
    return reports


def run_ablation(cfg: PipelineConfig, variants, sets: LoadedSets | None = None,
                 ) -> list[EvalReport]:
    """One run per knob setting, all under the configured seed."""
    if sets is None:
        sets = load_sets(cfg)
    reports = []
    for var in variants:
        sub = dataclasses.replace(cfg, use_hard_ood=var.use_hard_ood,
                                  ood_mix_ratio=var.ood_mix_ratio,
                                  compact_alpha=var.compact_alpha)
        reports.append(run_goen_sets(sub, sets, variant=var.name))
    return reports


def run_seeds(cfg: PipelineConfig, seeds, sets: LoadedSets | None = None,
              ) -> SeedSummary:
    """Repeat the full run per seed; aggregate mean and sample std (n-1)."""
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise InvariantViolation("need at least one seed")
    if sets is None:
        sets = load_sets(cfg)
    reports = tuple(
        run_goen_sets(cfg.with_seed(s), sets, variant=f"seed{s}")
        for s in seeds)
    keys = list(reports[0].flat_metrics().keys())
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for key in keys:
        vals = np.array([r.flat_metrics()[key] for r in reports])
        mean[key] = float(vals.mean())
        std[key] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return SeedSummary(seeds=seeds, reports=reports, mean=mean, std=std)


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------

def report_to_json(report: EvalReport) -> str:
    """Deterministic JSON: sorted keys, two-space indent, no timestamps."""
    return json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n"


def reports_to_json(reports) -> str:
    return json.dumps({"reports": [r.as_dict() for r in reports]},
                      sort_keys=True, indent=2) + "\n"


def seed_summary_to_json(summary: SeedSummary) -> str:
    return json.dumps(summary.as_dict(), sort_keys=True, indent=2) + "\n"


_ID_ROWS = (("accuracy", "ID Acc"), ("ece", "ID ECE"),
            ("nll", "ID NLL"), ("brier", "ID Brier"))
_OOD_ROWS = (("auroc", "AUROC"), ("aupr", "AUPR"),
             ("fpr_at_95tpr", "FPR@95TPR"),
             ("detection_accuracy", "Detection Acc"))


def _table_rows(reports) -> list[tuple[str, list[str]]]:
    ood_names: list[str] = []
    for rep in reports:
        for name, _ in rep.ood_evals:
            if name not in ood_names:
                ood_names.append(name)
    rows: list[tuple[str, list[str]]] = []

    def cell(value) -> str:
        return "-" if value is None else f"{value:.4f}"

    for key, label in _ID_ROWS:
        cells = [cell(None if rep.id_eval is None
                      else rep.id_eval.as_dict()[key]) for rep in reports]
        rows.append((label, cells))
    for name in ood_names:
        for key, label in _OOD_ROWS:
            cells = []
            for rep in reports:
                ev = dict(rep.ood_evals).get(name)
                cells.append(cell(None if ev is None else ev.as_dict()[key]))
            rows.append((f"{name} {label}", cells))
    rows.append(("Avg OOD AUROC", [cell(rep.average_auroc) for rep in reports]))
    return rows


def render_table(reports) -> str:
    """Aligned text table: metric rows, one column per report variant."""
    reports = list(reports)
    if not reports:
        raise InvariantViolation("no reports to render")
    headers = ["Metric"] + [rep.variant for rep in reports]
    rows = _table_rows(reports)
    widths = [max(len(headers[0]), *(len(r[0]) for r in rows))]
    for col, rep in enumerate(reports):
        widths.append(max(len(headers[col + 1]),
                          *(len(r[1][col]) for r in rows)))
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for label, cells in rows:
        parts = [label.ljust(widths[0])]
        parts += [c.rjust(w) for c, w in zip(cells, widths[1:])]
        lines.append("  ".join(parts).rstrip())
    return "\n".join(lines) + "\n"


def render_seed_table(summary: SeedSummary) -> str:
    """Metric rows with mean and sample std columns over the seed set."""
    keys = list(summary.mean.keys())
    name_w = max(len("Metric"), *(len(k) for k in keys))
    header = (f"{'Metric'.ljust(name_w)}  {'Mean'.rjust(10)}  "
              f"{'Std'.rjust(10)}")
    lines = [f"seeds: {', '.join(str(s) for s in summary.seeds)}", header,
             "-" * len(header)]
    for key in keys:
        lines.append(f"{key.ljust(name_w)}  {summary.mean[key]:10.4f}  "
                     f"{summary.std[key]:10.4f}")
    return "\n".join(lines) + "\n"
