"""Gaussian OOD scoring engine with a calibrated uncertainty head.

The flow: L2-normalise features, fit per-class Gaussian means with one tied
covariance, score new points by their smallest Mahalanobis distance, and map
a three-cue summary of each point through a small trained head to a
calibrated OOD probability. Everything is deterministic given a seed, and
every artifact (features, model, head, probability stacks) round-trips
through a little-endian binary file format.
"""

from .calibration_head import (
    HEAD_MAGIC,
    LAYER_SIZES,
    PARAM_COUNT,
    CalibrationHead,
    CueVector,
    TrainConfig,
    TrainHistory,
    bce_soft,
    build_cue_matrix,
    build_cues,
    cues_to_matrix,
    head_backward,
    head_forward,
    head_forward_batch,
    head_init,
    load_head,
    save_head,
    train_head,
)
from .errors import (
    NUMERIC_ERRORS,
    AlphaBelowOne,
    BadLabel,
    BadMagic,
    CountOverflow,
    DegenerateInput,
    DimensionMismatch,
    EmptyClass,
    EmptyInput,
    GoenError,
    InvariantViolation,
    IoFailure,
    KTooLarge,
    MissingInput,
    MissingLabels,
    MissingLogits,
    NonFiniteInput,
    NotPositiveDefinite,
    NotSimplex,
    NotSymmetric,
    SameFileForCalibAndEval,
    TooFewMembers,
    TruncatedFile,
    UnsupportedVersion,
    ZeroVector,
)
from .feature_store import (
    FeatureSet,
    SplitSpec,
    file_size,
    load_feature_file,
    save_feature_file,
    split,
)
from .geometry import (
    GaussianModel,
    condition_number,
    fit_gaussian,
    l2_normalize,
    load_model,
    mahalanobis_from_params,
    mahalanobis_per_class,
    max_cosine,
    max_cosine_rows,
    min_mahalanobis,
    min_mahalanobis_rows,
    normalize_rows,
    save_model,
)
from .metrics import (
    IDEval,
    OODEval,
    accuracy,
    auroc,
    aupr,
    brier,
    detection_accuracy_youden,
    ece,
    evaluate_id,
    evaluate_ood,
    fpr_at_tpr,
    nll,
)
from .pipeline import (
    BASELINE_RULES,
    DEFAULT_RULES,
    AblationVariant,
    EvalReport,
    LoadedSets,
    PipelineConfig,
    SeedSummary,
    calibrate_from_sets,
    load_sets,
    render_seed_table,
    render_table,
    report_to_json,
    reports_to_json,
    run_ablation,
    run_baseline_scores,
    run_goen,
    run_goen_sets,
    run_seeds,
    seed_summary_to_json,
)
from .rng import Xorshift64Star
from .scores import (
    ProbStack,
    energy_rows,
    energy_score,
    ensemble_variance,
    ensemble_variance_rows,
    entropy_rows,
    fit_temperature,
    gate_rows,
    gate_uncertainty,
    knn_score,
    knn_scores,
    load_prob_stack,
    max_softmax_rows,
    max_softmax_uncertainty,
    mutual_information,
    mutual_information_rows,
    predictive_entropy,
    save_prob_stack,
    softmax_rows,
    temperature_scale,
    vacuity,
    vacuity_rows,
)
from .synthetic import (
    MixtureSpec,
    TheoryCheckResult,
    attach_nearest_mean_logits,
    check_midpoint_degradation,
    check_normalization_conditioning,
    check_posterior_recovery,
    check_score_density_agreement,
    compact_features,
    gen_between_class_ood,
    gen_mixture,
    gen_noise_images_features,
    gen_uniform_sphere,
    make_fixture_suite,
    midpoint_ood_experiment,
    mixture_log_likelihood,
    random_mixture_spec,
)

__version__ = "0.1.0"
