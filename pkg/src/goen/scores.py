"""Uncertainty score rules. Every rule returns "higher = more OOD".

Each competing detector family reduces to one scalar rule on softmax
probabilities, logits, an ensemble probability stack, evidential
concentrations, or gate weights. The conversions are pinned here so that
every method is compared on the same footing; nothing in this module learns
anything.

Single-sample functions take one row; ``*_rows`` variants vectorise over a
matrix and are what the pipeline uses.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    AlphaBelowOne,
    BadMagic,
    DegenerateInput,
    DimensionMismatch,
    EmptyInput,
    InvariantViolation,
    IoFailure,
    KTooLarge,
    NonFiniteInput,
    NotSimplex,
    TooFewMembers,
    TruncatedFile,
    UnsupportedVersion,
)

SIMPLEX_TOL = 1e-5


def _require_simplex(probs: np.ndarray, what: str = "probabilities") -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise DimensionMismatch(f"{what} must be a vector, got shape {p.shape}")
    if p.size == 0:
        raise EmptyInput(f"{what} vector is empty")
    if not np.isfinite(p).all():
        raise NonFiniteInput(f"{what} contain NaN or infinity")
    if float(p.min()) < -1e-12:
        raise NotSimplex(f"{what} have a negative entry ({p.min():.3e})")
    total = float(p.sum())
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise NotSimplex(f"{what} sum to {total:.8f}, off 1 beyond {SIMPLEX_TOL:.0e}")
    return p


def _require_finite_vector(x: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"{what} must be a vector, got shape {v.shape}")
    if v.size == 0:
        raise EmptyInput(f"{what} vector is empty")
    if not np.isfinite(v).all():
        raise NonFiniteInput(f"{what} contain NaN or infinity")
    return v


# ---------------------------------------------------------------------------
# softmax-based rules
# ---------------------------------------------------------------------------

def max_softmax_uncertainty(probs: np.ndarray) -> float:
    """1 - max_c p_c."""
    p = _require_simplex(probs)
    return 1.0 - float(p.max())


def predictive_entropy(probs: np.ndarray) -> float:
    """Shannon entropy -sum p ln p, with 0 ln 0 = 0."""
    p = _require_simplex(probs)
    mask = p > 0
    return float(-(p[mask] * np.log(p[mask])).sum())


def temperature_scale(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """softmax(logits / T), computed with the max-shift trick."""
    z = _require_finite_vector(logits, "logits")
    if not (temperature > 0):
        raise InvariantViolation(f"temperature must be > 0, got {temperature}")
    z = z / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def energy_score(logits: np.ndarray, temperature: float = 1.0) -> float:
    """Energy E(x) = -T * logsumexp(logits / T), returned raw.

    Higher energy = more OOD; no sign flip is applied.
    """
    z = _require_finite_vector(logits, "logits")
    if not (temperature > 0):
        raise InvariantViolation(f"temperature must be > 0, got {temperature}")
    z = z / temperature
    m = float(z.max())
    return -temperature * (m + math.log(float(np.exp(z - m).sum())))


# ---------------------------------------------------------------------------
# ensemble rules
# ---------------------------------------------------------------------------

def _require_stack(stack: np.ndarray, what: str) -> np.ndarray:
    s = np.asarray(stack, dtype=np.float64)
    if s.ndim != 2:
        raise DimensionMismatch(f"{what} must be (M, C), got shape {s.shape}")
    if s.shape[0] < 2:
        raise TooFewMembers(f"{what} needs at least 2 members, got {s.shape[0]}")
    for row in s:
        _require_simplex(row, what)
    return s


def mutual_information(prob_stack: np.ndarray) -> float:
    """H(mean prediction) - mean member entropy, clamped at 0."""
    s = _require_stack(prob_stack, "probability stack")
    mean = s.mean(axis=0)
    mask = mean > 0
    h_mean = float(-(mean[mask] * np.log(mean[mask])).sum())
    member = np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)
    h_members = float(-member.sum(axis=1).mean())
    return max(h_mean - h_members, 0.0)


def ensemble_variance(prob_stack: np.ndarray) -> float:
    """Sum over classes of the population variance across members."""
    s = _require_stack(prob_stack, "probability stack")
    # shifting by the first member leaves the variance unchanged but makes
    # identical members give exactly 0
    return float((s - s[0]).var(axis=0, ddof=0).sum())


# ---------------------------------------------------------------------------
# evidential and gating rules
# ---------------------------------------------------------------------------

def vacuity(alphas: np.ndarray) -> float:
    """Evidential vacuity C / sum(alphas); alphas must all be >= 1."""
    a = _require_finite_vector(alphas, "alphas")
    if float(a.min()) < 1.0 - 1e-12:
        raise AlphaBelowOne(f"alpha {a.min():.6f} is below 1")
    return a.size / float(a.sum())


def gate_uncertainty(gates: np.ndarray) -> float:
    """1 - max gate weight (gates form a simplex over experts)."""
    g = _require_simplex(gates, "gate weights")
    return 1.0 - float(g.max())


# ---------------------------------------------------------------------------
# nearest-neighbour rule
# ---------------------------------------------------------------------------

def knn_score(train_normalized: np.ndarray, z: np.ndarray, k: int) -> float:
    """k-th smallest cosine distance 1 - z~ . x_i to the reference rows.

    Args:
        train_normalized: (N, D) matrix of unit-norm reference rows.
        z: query vector, normalised internally.
        k: 1-indexed neighbour rank, 1 <= k <= N.
    """
    from .geometry import l2_normalize  # local import avoids a cycle

    train = np.asarray(train_normalized, dtype=np.float64)
    if train.ndim != 2:
        raise DimensionMismatch(f"reference matrix must be 2-d, got {train.shape}")
    if train.shape[0] == 0:
        raise EmptyInput("reference matrix has no rows")
    norms = np.linalg.norm(train, axis=1)
    if float(np.abs(norms - 1.0).max()) > 1e-5:
        raise InvariantViolation("reference rows must be unit-norm")
    if k < 1:
        raise InvariantViolation(f"k must be >= 1, got {k}")
    if k > train.shape[0]:
        raise KTooLarge(f"k={k} exceeds {train.shape[0]} reference rows")
    zn = l2_normalize(np.asarray(z, dtype=np.float64))
    if zn.shape[0] != train.shape[1]:
        raise DimensionMismatch(f"query dim {zn.shape[0]} != reference dim {train.shape[1]}")
    dists = 1.0 - train @ zn
    return float(np.partition(dists, k - 1)[k - 1])


def knn_scores(train_normalized: np.ndarray, queries: np.ndarray, k: int,
               chunk: int = 2048) -> np.ndarray:
    """Batch knn_score over query rows (normalised internally), chunked."""
    from .geometry import normalize_rows

    train = np.asarray(train_normalized, dtype=np.float64)
    norms = np.linalg.norm(train, axis=1)
    if float(np.abs(norms - 1.0).max()) > 1e-5:
        raise InvariantViolation("reference rows must be unit-norm")
    if k < 1:
        raise InvariantViolation(f"k must be >= 1, got {k}")
    if k > train.shape[0]:
        raise KTooLarge(f"k={k} exceeds {train.shape[0]} reference rows")
    q = normalize_rows(queries)
    out = np.empty(q.shape[0], dtype=np.float64)
    for start in range(0, q.shape[0], chunk):
        block = q[start:start + chunk]
        dists = 1.0 - block @ train.T
        out[start:start + chunk] = np.partition(dists, k - 1, axis=1)[:, k - 1]
    return out


# ---------------------------------------------------------------------------
# temperature fitting
# ---------------------------------------------------------------------------

def _nll_at_temperature(logits: np.ndarray, labels: np.ndarray, t: float) -> float:
    z = logits / t
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    picked = np.maximum(p[np.arange(len(labels)), labels], 1e-12)
    return float(-np.log(picked).mean())


def fit_temperature(logits: np.ndarray, labels: np.ndarray,
                    t_lo: float = 0.05, t_hi: float = 20.0,
                    tol: float = 1e-3) -> float:
    """Temperature minimising validation NLL, by golden-section on ln T.

    The search runs on u = ln T over [ln t_lo, ln t_hi] and stops when the
    bracket is shorter than tol, then returns exp of the bracket midpoint.

    Raises:
        DegenerateInput: every logit row is constant, so T has no effect.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] < 1:
        raise DimensionMismatch(f"logits must be (N, C) with N >= 1, got {z.shape}")
    if y.shape != (z.shape[0],):
        raise DimensionMismatch(f"labels shape {y.shape} does not match N={z.shape[0]}")
    if not np.isfinite(z).all():
        raise NonFiniteInput("logits contain NaN or infinity")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise InvariantViolation(f"labels must lie in [0, {z.shape[1]})")
    if float(np.ptp(z, axis=1).max()) == 0.0:
        raise DegenerateInput("every logit row is constant; temperature is unidentifiable")

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(t_lo), math.log(t_hi)
    h = b - a
    c = b - invphi * h
    d = a + invphi * h
    fc = _nll_at_temperature(z, y, math.exp(c))
    fd = _nll_at_temperature(z, y, math.exp(d))
    while h > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            h = b - a
            c = b - invphi * h
            fc = _nll_at_temperature(z, y, math.exp(c))
        else:
            a, c, fc = c, d, fd
            h = b - a
            d = a + invphi * h
            fd = _nll_at_temperature(z, y, math.exp(d))
    return math.exp((a + b) / 2.0)


# ---------------------------------------------------------------------------
# row-wise helpers
# ---------------------------------------------------------------------------

def softmax_rows(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise stable softmax(logits / T)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionMismatch(f"logits must be (N, C), got {z.shape}")
    if not np.isfinite(z).all():
        raise NonFiniteInput("logits contain NaN or infinity")
    if not (temperature > 0):
        raise InvariantViolation(f"temperature must be > 0, got {temperature}")
    z = z / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy; rows are assumed pre-validated simplexes."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=1)


def max_softmax_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise 1 - max_c p_c."""
    return 1.0 - np.asarray(probs, dtype=np.float64).max(axis=1)


def energy_rows(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise energy score."""
    z = np.asarray(logits, dtype=np.float64)
    if not (temperature > 0):
        raise InvariantViolation(f"temperature must be > 0, got {temperature}")
    if not np.isfinite(z).all():
        raise NonFiniteInput("logits contain NaN or infinity")
    z = z / temperature
    m = z.max(axis=1)
    return -temperature * (m + np.log(np.exp(z - m[:, None]).sum(axis=1)))


def vacuity_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise evidential vacuity with concentrations relu(logit) + 1."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionMismatch(f"logits must be (N, C), got {z.shape}")
    if not np.isfinite(z).all():
        raise NonFiniteInput("logits contain NaN or infinity")
    alphas = np.maximum(z, 0.0) + 1.0
    return z.shape[1] / alphas.sum(axis=1)


# ---------------------------------------------------------------------------
# probability stacks (ensembles, MC passes, gate weights)
# ---------------------------------------------------------------------------

STACK_MAGIC = b"GOENPROB"
STACK_VERSION = 1
_STACK_HEADER = struct.Struct("<8sIIQI")


@dataclass(frozen=True)
class ProbStack:
    """M stochastic passes (or ensemble members) of per-class probabilities.

    probs has shape (M, N, C); every row along the class axis is a simplex
    within 1e-5. M=1 stacks are legal and carry gate weights.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise DimensionMismatch(f"probs must be (M, N, C), got {p.shape}")
        m, n, c = p.shape
        if m < 1 or n < 1 or c < 1:
            raise EmptyInput(f"stack dimensions must all be >= 1, got {p.shape}")
        if not np.isfinite(p).all():
            raise NonFiniteInput("stack contains NaN or infinity")
        if float(p.min()) < -1e-12 or float(p.max()) > 1.0 + 1e-12:
            raise NotSimplex("stack entries must lie in [0, 1]")
        sums = p.sum(axis=2)
        if float(np.abs(sums - 1.0).max()) > SIMPLEX_TOL:
            raise NotSimplex("stack rows must each sum to 1 within 1e-5")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def members(self) -> int:
        return self.probs.shape[0]

    @property
    def n(self) -> int:
        return self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]


def mutual_information_rows(stack: ProbStack) -> np.ndarray:
    """Per-sample mutual information over the stack's members."""
    if stack.members < 2:
        raise TooFewMembers(f"need >= 2 members, got {stack.members}")
    p = stack.probs
    mean = p.mean(axis=0)
    logp = np.log(np.where(p > 0, p, 1.0))
    member_h = -(p * logp).sum(axis=2).mean(axis=0)
    logm = np.log(np.where(mean > 0, mean, 1.0))
    mean_h = -(mean * logm).sum(axis=1)
    return np.maximum(mean_h - member_h, 0.0)


def ensemble_variance_rows(stack: ProbStack) -> np.ndarray:
    """Per-sample sum over classes of across-member population variance."""
    if stack.members < 2:
        raise TooFewMembers(f"need >= 2 members, got {stack.members}")
    shifted = stack.probs - stack.probs[0]
    return shifted.var(axis=0, ddof=0).sum(axis=1)


def gate_rows(stack: ProbStack) -> np.ndarray:
    """Per-sample 1 - max gate weight; gate stacks carry exactly one member."""
    if stack.members != 1:
        raise InvariantViolation(
            f"gate stacks must have exactly 1 member, got {stack.members}")
    return 1.0 - stack.probs[0].max(axis=1)


def save_prob_stack(stack: ProbStack, path: str) -> None:
    """Write a stack: 28-byte header, then M*N*C float32 LE, member-major."""
    header = _STACK_HEADER.pack(STACK_MAGIC, STACK_VERSION, stack.members,
                                stack.n, stack.num_classes)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(stack.probs, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_prob_stack(path: str) -> ProbStack:
    """Read a stack file written by save_prob_stack."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < _STACK_HEADER.size:
        raise TruncatedFile(f"{path}: {len(blob)} bytes is shorter than the header")
    magic, version, m, n, c = _STACK_HEADER.unpack_from(blob)
    if magic != STACK_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != STACK_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    need = _STACK_HEADER.size + 4 * m * n * c
    if len(blob) < need:
        raise TruncatedFile(f"{path}: need {need} bytes, have {len(blob)}")
    if len(blob) > need:
        raise InvariantViolation(f"{path}: {len(blob) - need} trailing bytes")
    probs = np.frombuffer(blob, dtype="<f4", count=m * n * c,
                          offset=_STACK_HEADER.size).reshape(m, n, c)
    return ProbStack(probs=probs.astype(np.float64))
