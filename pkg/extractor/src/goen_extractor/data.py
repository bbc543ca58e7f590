"""Datasets, deterministic splits, and synthetic noise images.

Everything stochastic here is driven by the same xorshift64* generator
the engine documents (its README publishes the seed-42 reference
sequence), reimplemented locally so the two packages agree on splits
without importing each other. Images are normalised with CIFAR-10
channel statistics across the board, OOD sets included, so that
distance-based scoring sees a common scale.
"""

from __future__ import annotations

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset, Subset
from torchvision import datasets, transforms

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)

TRAIN_BATCH = 128
EXTRACT_BATCH = 512

VAL_COUNT = 5_000
SVHN_CALIB_COUNT = 5_000

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Xorshift64Star:
    """Engine-compatible PRNG; must match the published reference sequence."""

    def __init__(self, seed: int):
        z = (int(seed) + _GOLDEN) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self._state = z if z != 0 else _GOLDEN

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, xs: list) -> None:
        for i in range(len(xs) - 1, 0, -1):
            j = self.below(i + 1)
            xs[i], xs[j] = xs[j], xs[i]


def permutation(n: int, seed: int) -> list[int]:
    """Fisher-Yates permutation of range(n), identical to the engine's."""
    xs = list(range(n))
    Xorshift64Star(seed).shuffle(xs)
    return xs


def train_val_indices(n: int, seed: int,
                      val_count: int = VAL_COUNT) -> tuple[list[int], list[int]]:
    """Disjoint, exhaustive train/val index sets from one permutation."""
    if not 0 < val_count < n:
        raise ValueError(f"val_count must be in (0, {n}), got {val_count}")
    order = permutation(n, seed)
    return sorted(order[val_count:]), sorted(order[:val_count])


def svhn_calib_eval_indices(n: int, seed: int,
                            calib_count: int = SVHN_CALIB_COUNT
                            ) -> tuple[list[int], list[int]]:
    """Disjoint calibration/evaluation index sets over the SVHN test split."""
    if not 0 < calib_count < n:
        raise ValueError(f"calib_count must be in (0, {n}), got {calib_count}")
    order = permutation(n, seed)
    return sorted(order[:calib_count]), sorted(order[calib_count:])


# The 50 CIFAR-100 classes kept for the semantic-shift OOD set: flowers,
# fruit and vegetables, furniture, household items, insects, people,
# scenes, and trees. Nothing with a CIFAR-10 counterpart (no vehicles,
# no mammals, no reptiles or aquatic animals).
CIFAR100_KEPT_CLASSES = (
    "apple", "baby", "bed", "bee", "beetle",
    "bottle", "bowl", "boy", "bridge", "butterfly",
    "can", "castle", "caterpillar", "chair", "clock",
    "cloud", "cockroach", "couch", "cup", "forest",
    "girl", "house", "keyboard", "lamp", "man",
    "maple_tree", "mountain", "mushroom", "oak_tree", "orange",
    "orchid", "palm_tree", "pear", "pine_tree", "plain",
    "plate", "poppy", "road", "rose", "sea",
    "skyscraper", "sunflower", "sweet_pepper", "table", "telephone",
    "television", "tulip", "wardrobe", "willow_tree", "woman",
)


def eval_transform() -> transforms.Compose:
    return transforms.Compose([
        transforms.ToTensor(),
        transforms.Normalize(CIFAR10_MEAN, CIFAR10_STD),
    ])


def train_transform() -> transforms.Compose:
    return transforms.Compose([
        transforms.RandomHorizontalFlip(),
        transforms.RandomCrop(32, padding=4),
        transforms.ToTensor(),
        transforms.Normalize(CIFAR10_MEAN, CIFAR10_STD),
    ])


def gen_noise_images(count: int, seed: int) -> torch.Tensor:
    """Structureless images: clip(N(0.5, 0.5), 0, 1), CIFAR-normalised.

    Drawn through numpy from the shared PRNG's first output so the batch
    is bit-stable across runs and platforms.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(Xorshift64Star(seed).next_u64())
    raw = np.clip(rng.normal(0.5, 0.5, size=(count, 3, 32, 32)), 0.0, 1.0)
    mean = np.asarray(CIFAR10_MEAN).reshape(1, 3, 1, 1)
    std = np.asarray(CIFAR10_STD).reshape(1, 3, 1, 1)
    return torch.from_numpy(((raw - mean) / std).astype(np.float32))


class NoiseDataset(Dataset):
    """Pre-generated noise images with a dummy label for loader parity."""

    def __init__(self, count: int, seed: int):
        self.images = gen_noise_images(count, seed)

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, idx: int):
        return self.images[idx], -1


class FilteredCifar100(Dataset):
    """CIFAR-100 test images restricted to the kept class list."""

    def __init__(self, root: str, download: bool = True):
        base = datasets.CIFAR100(root, train=False, download=download,
                                 transform=eval_transform())
        kept = {base.class_to_idx[name] for name in CIFAR100_KEPT_CLASSES}
        missing = set(CIFAR100_KEPT_CLASSES) - set(base.class_to_idx)
        if missing:
            raise RuntimeError(f"class names not in CIFAR-100: {sorted(missing)}")
        self.base = base
        self.indices = [i for i, y in enumerate(base.targets) if y in kept]

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, idx: int):
        return self.base[self.indices[idx]]


def cifar10_splits(root: str, seed: int, download: bool = True):
    """(train_aug, train_plain, val, test); train/val carved from the 50k split.

    train_aug and train_plain cover the same rows; the first applies the
    flip/crop augmentation for gradient steps, the second the evaluation
    transform for feature extraction.
    """
    train_full = datasets.CIFAR10(root, train=True, download=download,
                                  transform=train_transform())
    plain_full = datasets.CIFAR10(root, train=True, download=download,
                                  transform=eval_transform())
    test = datasets.CIFAR10(root, train=False, download=download,
                            transform=eval_transform())
    train_idx, val_idx = train_val_indices(len(train_full), seed)
    # augmentation only on the loader actually used for gradient steps;
    # the eval-transform twin of the train subset is used for extraction
    return (Subset(train_full, train_idx), Subset(plain_full, train_idx),
            Subset(plain_full, val_idx), test)


def svhn_splits(root: str, seed: int, download: bool = True):
    """(calibration, evaluation) subsets of the SVHN test split, disjoint."""
    base = datasets.SVHN(root, split="test", download=download,
                         transform=eval_transform())
    calib_idx, eval_idx = svhn_calib_eval_indices(len(base), seed)
    return Subset(base, calib_idx), Subset(base, eval_idx)


def loader(dataset: Dataset, batch_size: int = EXTRACT_BATCH,
           shuffle: bool = False, seed: int = 0,
           num_workers: int = 0) -> DataLoader:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle,
                      generator=gen if shuffle else None,
                      num_workers=num_workers)
