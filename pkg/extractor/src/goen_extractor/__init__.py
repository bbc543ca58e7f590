"""Multi-scale feature extraction feeding the goen detection engine."""

from .data import (
    CIFAR10_MEAN,
    CIFAR10_STD,
    CIFAR100_KEPT_CLASSES,
    FilteredCifar100,
    NoiseDataset,
    Xorshift64Star,
    cifar10_splits,
    gen_noise_images,
    loader,
    permutation,
    svhn_calib_eval_indices,
    svhn_splits,
    train_val_indices,
)
from .export import (
    DimensionDrift,
    ExportRun,
    extract_features,
    write_feature_file,
)
from .model import (
    CONCAT_DIM,
    PROJECTED_DIM,
    MultiScaleResNet,
    load_checkpoint,
    save_checkpoint,
)
from .train import CenterLoss, TrainSettings, train_backbone, validation_loss
