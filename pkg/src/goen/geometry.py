"""Unit-sphere geometry and the class-conditional Gaussian density model.

Features are projected onto the unit sphere before any estimation; every
distance below is a distance between normalised vectors. The model is one
mean per class plus a single covariance tied across classes, regularised by
epsilon on the diagonal, with the precision matrix obtained from a Cholesky
solve (never an explicit cofactor inverse). All fitting and scoring runs in
float64 regardless of the input dtype.

Model file format (GOENMODL, version 1), little-endian, no padding:

====== ======= ==========================================
offset size    field
====== ======= ==========================================
0      8       magic, ASCII ``GOENMODL``
8      4       version, u32, must be 1
12     4       C, u32, number of classes
16     8       D, u64, feature dimension
24     8       epsilon, f64
32     C*D*8   means, f64, row-major
...    D*D*8   covariance, f64, row-major
====== ======= ==========================================

The precision matrix is recomputed on load and re-checked against the stored
covariance, so a file cannot smuggle in an inconsistent inverse.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyClass,
    InvariantViolation,
    IoFailure,
    MissingLabels,
    NotPositiveDefinite,
    NotSymmetric,
    TruncatedFile,
    UnsupportedVersion,
    ZeroVector,
)
from .feature_store import FeatureSet

MODEL_MAGIC = b"GOENMODL"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<8sIIQd")

ZERO_NORM_THRESHOLD = 1e-30


def l2_normalize(z: np.ndarray) -> np.ndarray:
    """Project a vector onto the unit sphere (float64).

    Raises:
        ZeroVector: if the norm is below 1e-30.
        NonFiniteInput handling is left to callers; NaNs propagate.
    """
    z = np.asarray(z, dtype=np.float64)
    norm = float(np.linalg.norm(z))
    if norm < ZERO_NORM_THRESHOLD:
        raise ZeroVector(f"vector norm {norm:.3e} is below {ZERO_NORM_THRESHOLD:.0e}")
    return z / norm


def normalize_rows(features: np.ndarray) -> np.ndarray:
    """Row-wise unit normalisation; names the first offending row on failure."""
    feats = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1)
    bad = np.flatnonzero(norms < ZERO_NORM_THRESHOLD)
    if bad.size:
        raise ZeroVector(f"row {bad[0]} has norm {norms[bad[0]]:.3e}")
    return feats / norms[:, None]


@dataclass(frozen=True)
class GaussianModel:
    """Per-class means with one tied, regularised covariance.

    Invariants (checked at construction):
        * covariance symmetric within 1e-9 relative;
        * smallest covariance eigenvalue >= epsilon * (1 - 1e-6);
        * max |precision @ covariance - I| < 1e-6;
        * every mean norm <= 1 + 1e-9 (means of unit vectors);
        * class_counts all >= 1.
    """

    means: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    epsilon: float
    class_counts: np.ndarray

    def __post_init__(self):
        means = np.ascontiguousarray(self.means, dtype=np.float64)
        cov = np.ascontiguousarray(self.covariance, dtype=np.float64)
        prec = np.ascontiguousarray(self.precision, dtype=np.float64)
        counts = np.ascontiguousarray(self.class_counts, dtype=np.int64)
        if means.ndim != 2:
            raise InvariantViolation("means must be (C, D)")
        c, d = means.shape
        if cov.shape != (d, d) or prec.shape != (d, d):
            raise InvariantViolation(
                f"covariance/precision must be ({d}, {d}), got "
                f"{cov.shape} and {prec.shape}"
            )
        if counts.shape != (c,):
            raise InvariantViolation(f"class_counts must be ({c},)")
        if (counts < 1).any():
            raise InvariantViolation("class_counts must all be >= 1")
        if not (self.epsilon > 0):
            raise InvariantViolation(f"epsilon must be > 0, got {self.epsilon}")

        scale = max(float(np.abs(cov).max()), 1e-300)
        if float(np.abs(cov - cov.T).max()) > 1e-9 * scale:
            raise InvariantViolation("covariance is not symmetric within 1e-9")
        eigmin = float(np.linalg.eigvalsh(cov)[0])
        if eigmin < self.epsilon * (1.0 - 1e-6):
            raise InvariantViolation(
                f"covariance eigenvalue {eigmin:.3e} below epsilon floor "
                f"{self.epsilon:.3e}"
            )
        residual = float(np.abs(prec @ cov - np.eye(d)).max())
        if residual > 1e-6:
            raise InvariantViolation(
                f"precision @ covariance deviates from identity by {residual:.3e}"
            )
        norms = np.linalg.norm(means, axis=1)
        if float(norms.max()) > 1.0 + 1e-9:
            raise InvariantViolation(
                f"mean norm {norms.max():.12f} exceeds 1 (means of unit vectors)"
            )
        for field_name, value in (("means", means), ("covariance", cov),
                                  ("precision", prec), ("class_counts", counts)):
            value.flags.writeable = False
            object.__setattr__(self, field_name, value)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_moments(cls, means: np.ndarray, covariance: np.ndarray,
                     epsilon: float,
                     class_counts: np.ndarray | None = None) -> "GaussianModel":
        """Build a model from means and covariance; derives the precision.

        The precision comes from a Cholesky factorisation and triangular
        solves, then is symmetrised as (P + P.T) / 2.
        """
        cov = np.ascontiguousarray(covariance, dtype=np.float64)
        try:
            chol = scipy.linalg.cho_factor(cov, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(f"covariance is not SPD: {exc}") from exc
        prec = scipy.linalg.cho_solve(chol, np.eye(cov.shape[0]),
                                      check_finite=False)
        prec = (prec + prec.T) / 2.0
        if class_counts is None:
            class_counts = np.ones(np.asarray(means).shape[0], dtype=np.int64)
        return cls(means=means, covariance=cov, precision=prec,
                   epsilon=epsilon, class_counts=class_counts)


def fit_gaussian(train: FeatureSet, epsilon: float = 1e-5) -> GaussianModel:
    """Fit per-class means and one tied covariance on normalised features.

    The covariance is the population scatter about the class means,
    sum_c sum_{i in c} (z_i - mu_c)(z_i - mu_c)^T / N, plus epsilon * I.

    Args:
        train: labeled feature set; every class in [0, C) must be populated.
        epsilon: diagonal regulariser, must be > 0.

    Raises:
        MissingLabels: the set has no labels.
        InvariantViolation: epsilon <= 0.
        EmptyClass: some class has no samples.
        ZeroVector: some feature row cannot be normalised.
    """
    if train.labels is None:
        raise MissingLabels(f"set {train.name!r} has no labels")
    if not (epsilon > 0):
        raise InvariantViolation(f"epsilon must be > 0, got {epsilon}")
    c = train.num_classes
    counts = np.bincount(train.labels, minlength=c)
    for cls_idx in range(c):
        if counts[cls_idx] == 0:
            raise EmptyClass(cls_idx)

    z = normalize_rows(train.features)
    n, d = z.shape
    means = np.empty((c, d), dtype=np.float64)
    scatter = np.zeros((d, d), dtype=np.float64)
    for cls_idx in range(c):
        rows = z[train.labels == cls_idx]
        mu = rows.mean(axis=0)
        means[cls_idx] = mu
        centered = rows - mu
        scatter += centered.T @ centered
    cov = scatter / n + epsilon * np.eye(d)
    cov = (cov + cov.T) / 2.0
    return GaussianModel.from_moments(means, cov, epsilon, counts)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def _check_dim(model: GaussianModel, d: int) -> None:
    if d != model.dim:
        raise DimensionMismatch(f"input dim {d} != model dim {model.dim}")


def mahalanobis_from_params(means: np.ndarray, precision: np.ndarray,
                            points: np.ndarray) -> np.ndarray:
    """(N, C) squared Mahalanobis distances, no normalisation applied.

    Building block shared by the model scoring below (which feeds it unit
    vectors) and by theory experiments that deliberately work on raw points.
    Tiny negative rounding residue is clamped to 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    g = pts @ precision
    base = np.einsum("nd,nd->n", g, pts)
    cross = g @ means.T
    const = np.einsum("cd,cd->c", means @ precision, means)
    dists = base[:, None] - 2.0 * cross + const[None, :]
    return np.maximum(dists, 0.0)


def mahalanobis_per_class(model: GaussianModel, z: np.ndarray) -> np.ndarray:
    """(C,) squared Mahalanobis distances of one normalised vector.

    The input is normalised internally, so any positive rescaling of z
    yields the same distances.
    """
    z = np.asarray(z, dtype=np.float64)
    _check_dim(model, z.shape[-1])
    zn = l2_normalize(z)
    diff = model.means - zn[None, :]
    dists = np.einsum("cd,de,ce->c", diff, model.precision, diff)
    return np.maximum(dists, 0.0)


def min_mahalanobis(model: GaussianModel, z: np.ndarray) -> float:
    """Distance to the nearest class density; higher = more OOD."""
    return float(mahalanobis_per_class(model, z).min())


def min_mahalanobis_rows(model: GaussianModel, features: np.ndarray) -> np.ndarray:
    """(N,) min-Mahalanobis scores for a feature matrix (rows normalised)."""
    feats = np.asarray(features, dtype=np.float64)
    _check_dim(model, feats.shape[1])
    zn = normalize_rows(feats)
    return mahalanobis_from_params(model.means, model.precision, zn).min(axis=1)


def max_cosine(model: GaussianModel, z: np.ndarray) -> float:
    """Largest dot product between the normalised input and any class mean.

    Means are used exactly as stored (their norms are <= 1), so this is a
    cosine against the mean direction scaled by the mean's length.
    """
    z = np.asarray(z, dtype=np.float64)
    _check_dim(model, z.shape[-1])
    return float((model.means @ l2_normalize(z)).max())


def max_cosine_rows(model: GaussianModel, features: np.ndarray) -> np.ndarray:
    """(N,) max-cosine scores for a feature matrix (rows normalised)."""
    feats = np.asarray(features, dtype=np.float64)
    _check_dim(model, feats.shape[1])
    return (normalize_rows(feats) @ model.means.T).max(axis=1)


def condition_number(matrix: np.ndarray, sym_tol: float = 1e-8) -> float:
    """Eigenvalue ratio lambda_max / lambda_min of a symmetric PD matrix.

    Raises:
        NotSymmetric: relative asymmetry above sym_tol.
        NotPositiveDefinite: smallest eigenvalue <= 0.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got {a.shape}")
    scale = max(float(np.abs(a).max()), 1e-300)
    if float(np.abs(a - a.T).max()) > sym_tol * scale:
        raise NotSymmetric(f"asymmetry exceeds {sym_tol:.0e} relative")
    eigs = np.linalg.eigvalsh((a + a.T) / 2.0)
    if eigs[0] <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {eigs[0]:.3e} <= 0")
    return float(eigs[-1] / eigs[0])


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_model(model: GaussianModel, path: str | os.PathLike) -> None:
    """Write a GOENMODL v1 file (means and covariance; precision is derived)."""
    header = _MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.num_classes,
                                model.dim, model.epsilon)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(model.means, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(model.covariance, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_model(path: str | os.PathLike) -> GaussianModel:
    """Read a GOENMODL v1 file, recompute the precision, re-validate.

    Class counts are not part of the format; the loaded model carries
    class_counts = ones(C) as a documented placeholder.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < _MODEL_HEADER.size:
        raise TruncatedFile(f"{path}: shorter than the header")
    magic, version, c, d, epsilon = _MODEL_HEADER.unpack_from(blob, 0)
    if magic != MODEL_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, supported: {MODEL_VERSION}")
    if c < 1 or d < 1:
        raise InvariantViolation(f"{path}: header needs C,D >= 1, got {c},{d}")
    expected = _MODEL_HEADER.size + (c * d + d * d) * 8
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: {len(blob)} bytes, header promises {expected}")
    if len(blob) > expected:
        raise InvariantViolation(f"{path}: trailing bytes after the payload")
    offset = _MODEL_HEADER.size
    means = np.frombuffer(blob, dtype="<f8", count=c * d, offset=offset)
    means = means.reshape(c, d).astype(np.float64)
    offset += c * d * 8
    cov = np.frombuffer(blob, dtype="<f8", count=d * d, offset=offset)
    cov = cov.reshape(d, d).astype(np.float64)
    return GaussianModel.from_moments(means, cov, epsilon)
