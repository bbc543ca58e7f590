"""Feature sets: in-memory container, binary file format, deterministic splits.

A feature set is the unit of exchange between the backbone side (which emits
files) and the numerical engine (which consumes them). The container is
immutable after construction and validated eagerly, so everything downstream
can assume clean shapes and finite values.

File format (GOENFEAT, version 1)
---------------------------------
All integers and floats are little-endian. No padding anywhere.

====== ======= ====================================================
offset size    field
====== ======= ====================================================
0      8       magic, ASCII ``GOENFEAT``
8      4       version, u32, must be 1
12     4       flags, u32; bit0 = labels block, bit1 = logits block
16     8       N, u64, number of rows (>= 1)
24     8       D, u64, feature dimension (>= 1)
32     4       C, u32, number of classes (>= 1)
36     N*D*4   features, f32, row-major
...    N*4     labels, i32, only if flags bit0 (-1 means unlabeled)
...    N*C*4   logits, f32, only if flags bit1
====== ======= ====================================================

A labels block that is entirely -1 loads as "no labels" (exporters for OOD
data sometimes insist on writing one); a block mixing -1 with real labels is
rejected. Unknown flag bits and trailing bytes are rejected.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    CountOverflow,
    InvariantViolation,
    IoFailure,
    NonFiniteInput,
    TruncatedFile,
    UnsupportedVersion,
)
from .rng import Xorshift64Star

MAGIC = b"GOENFEAT"
VERSION = 1

_FLAG_LABELS = 1
_FLAG_LOGITS = 2
_HEADER = struct.Struct("<8sIIQQI")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureSet:
    """Immutable bundle of features with optional labels and logits.

    Attributes:
        features: (N, D) float32 or float64 matrix, all finite.
        num_classes: C >= 1; the label alphabet and logit width.
        labels: optional (N,) int32 vector, every entry in [0, C).
        logits: optional (N, C) float matrix, all finite.
        name: short identifier used in reports.
    """

    features: np.ndarray
    num_classes: int
    labels: np.ndarray | None = None
    logits: np.ndarray | None = None
    name: str = "unnamed"

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.dtype not in (np.float32, np.float64):
            feats = feats.astype(np.float64)
        if feats.ndim != 2:
            raise InvariantViolation(f"features must be 2-d, got shape {feats.shape}")
        n, d = feats.shape
        if n < 1 or d < 1:
            raise InvariantViolation(f"features need N >= 1 and D >= 1, got {feats.shape}")
        if not np.isfinite(feats).all():
            raise NonFiniteInput("features contain NaN or infinity")
        object.__setattr__(self, "features", _frozen(feats))

        c = int(self.num_classes)
        if c < 1:
            raise InvariantViolation(f"num_classes must be >= 1, got {c}")
        object.__setattr__(self, "num_classes", c)

        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise InvariantViolation(
                    f"labels shape {labels.shape} does not match N={n}"
                )
            if not np.issubdtype(labels.dtype, np.integer):
                raise InvariantViolation("labels must be integers")
            if labels.min() < 0 or labels.max() >= c:
                raise InvariantViolation(
                    f"labels must lie in [0, {c}), got range "
                    f"[{labels.min()}, {labels.max()}]"
                )
            object.__setattr__(self, "labels", _frozen(labels.astype(np.int32)))

        if self.logits is not None:
            logits = np.asarray(self.logits)
            if logits.dtype not in (np.float32, np.float64):
                logits = logits.astype(np.float64)
            if logits.shape != (n, c):
                raise InvariantViolation(
                    f"logits shape {logits.shape} does not match (N={n}, C={c})"
                )
            if not np.isfinite(logits).all():
                raise NonFiniteInput("logits contain NaN or infinity")
            object.__setattr__(self, "logits", _frozen(logits))

        if not isinstance(self.name, str) or not self.name:
            raise InvariantViolation("name must be a non-empty string")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, idx: np.ndarray, name: str | None = None) -> "FeatureSet":
        """New set holding the given rows (used by split)."""
        return FeatureSet(
            features=self.features[idx],
            num_classes=self.num_classes,
            labels=None if self.labels is None else self.labels[idx],
            logits=None if self.logits is None else self.logits[idx],
            name=name or self.name,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic split request.

    Either `counts` (absolute row counts) or `fractions` (of N, converted by
    rounding) must be given. Splits are disjoint consecutive chunks of one
    Fisher-Yates permutation drawn from the engine PRNG with `seed`; rows
    beyond the requested total stay unassigned.
    """

    seed: int
    counts: tuple[int, ...] | None = None
    fractions: tuple[float, ...] | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if (self.counts is None) == (self.fractions is None):
            raise InvariantViolation("exactly one of counts/fractions must be set")
        if self.counts is not None:
            object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
            if any(c < 0 for c in self.counts):
                raise InvariantViolation("counts must be non-negative")
        if self.fractions is not None:
            object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
            if any(f < 0 for f in self.fractions):
                raise InvariantViolation("fractions must be non-negative")
        parts = self.counts if self.counts is not None else self.fractions
        if len(parts) == 0:
            raise InvariantViolation("split needs at least one part")
        if self.names is not None and len(self.names) != len(parts):
            raise InvariantViolation("names length must match the number of parts")

    def resolve_counts(self, n: int) -> list[int]:
        if self.counts is not None:
            counts = list(self.counts)
        else:
            counts = [int(round(f * n)) for f in self.fractions]
        total = sum(counts)
        if total > n:
            raise CountOverflow(f"split wants {total} rows but the set has {n}")
        return counts


def split(dataset: FeatureSet, spec: SplitSpec) -> list[FeatureSet]:
    """Partition a set into disjoint subsets, deterministically in the seed.

    The permutation is Fisher-Yates driven by Xorshift64Star(spec.seed), and
    part i takes the i-th consecutive chunk. Identical (dataset, spec) input
    always produces identical output.
    """
    counts = spec.resolve_counts(dataset.n)
    perm = Xorshift64Star(spec.seed).permutation(dataset.n)
    out: list[FeatureSet] = []
    start = 0
    for i, count in enumerate(counts):
        idx = perm[start:start + count]
        start += count
        suffix = spec.names[i] if spec.names is not None else f"part{i}"
        out.append(dataset.take(np.sort(idx), name=f"{dataset.name}/{suffix}"))
    return out


# ---------------------------------------------------------------------------
# binary I/O
# ---------------------------------------------------------------------------

def save_feature_file(dataset: FeatureSet, path: str | os.PathLike) -> None:
    """Write a GOENFEAT v1 file. Matrices are stored as little-endian f32."""
    flags = 0
    if dataset.labels is not None:
        flags |= _FLAG_LABELS
    if dataset.logits is not None:
        flags |= _FLAG_LOGITS
    header = _HEADER.pack(MAGIC, VERSION, flags, dataset.n, dataset.dim,
                          dataset.num_classes)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
            if dataset.labels is not None:
                fh.write(np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes())
            if dataset.logits is not None:
                fh.write(np.ascontiguousarray(dataset.logits, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_feature_file(path: str | os.PathLike, name: str | None = None) -> FeatureSet:
    """Read a GOENFEAT v1 file and validate every declared invariant.

    An all-minus-one labels block is treated as "unlabeled" and dropped.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(blob) < _HEADER.size:
        raise TruncatedFile(f"{path}: {len(blob)} bytes is shorter than the header")
    magic, version, flags, n, d, c = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, supported: {VERSION}")
    if flags & ~(_FLAG_LABELS | _FLAG_LOGITS):
        raise InvariantViolation(f"{path}: unknown flag bits 0x{flags:x}")
    if n < 1 or d < 1 or c < 1:
        raise InvariantViolation(f"{path}: header needs N,D,C >= 1, got {n},{d},{c}")

    expected = _HEADER.size + n * d * 4
    if flags & _FLAG_LABELS:
        expected += n * 4
    if flags & _FLAG_LOGITS:
        expected += n * c * 4
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: {len(blob)} bytes, header promises {expected}")
    if len(blob) > expected:
        raise InvariantViolation(
            f"{path}: {len(blob) - expected} trailing bytes after the payload"
        )

    offset = _HEADER.size
    feats = np.frombuffer(blob, dtype="<f4", count=n * d, offset=offset)
    feats = feats.reshape(n, d).astype(np.float32)
    offset += n * d * 4

    labels = None
    if flags & _FLAG_LABELS:
        raw = np.frombuffer(blob, dtype="<i4", count=n, offset=offset)
        offset += n * 4
        if (raw == -1).all():
            labels = None
        elif (raw == -1).any():
            raise InvariantViolation(
                f"{path}: labels mix -1 (unlabeled) with real labels"
            )
        else:
            labels = raw.astype(np.int32)

    logits = None
    if flags & _FLAG_LOGITS:
        logits = np.frombuffer(blob, dtype="<f4", count=n * c, offset=offset)
        logits = logits.reshape(n, c).astype(np.float32)

    stem = name if name is not None else os.path.splitext(os.path.basename(path))[0]
    return FeatureSet(features=feats, num_classes=c, labels=labels,
                      logits=logits, name=stem)


def file_size(n: int, d: int, c: int, with_labels: bool, with_logits: bool) -> int:
    """Exact byte size of a GOENFEAT v1 file with the given header."""
    size = _HEADER.size + n * d * 4
    if with_labels:
        size += n * 4
    if with_logits:
        size += n * c * 4
    return size
