"""Calibrated uncertainty head: a tiny MLP from cue vectors to one score.

The head maps a 3-component cue vector (log-compressed density distance,
mean-affinity, predictive entropy) through layers 3 -> 64 -> 32 -> 1 with
ReLU activations and a sigmoid output. It is trained with soft-target binary
cross entropy against asymmetric targets (ID 0.05, OOD 0.95) using Adam, and
early stopping keeps the parameters from the epoch with the widest
OOD-minus-ID score gap on a held-out cue pool.

Everything here is plain numpy with explicit forward and backward passes;
the backward pass is checked against central finite differences in the test
suite, so no autograd framework is involved.

Head file format (GOENHEAD, version 1), little-endian, no padding:
magic ``GOENHEAD`` (8 bytes), version u32, four layer sizes u32
(must be 3, 64, 32, 1), then all 2369 parameters as f64 in layer order,
each layer's weight matrix row-major followed by its bias vector.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyInput,
    InvariantViolation,
    IoFailure,
    MissingLogits,
    NonFiniteInput,
    TruncatedFile,
    UnsupportedVersion,
)
from .feature_store import FeatureSet
from .geometry import GaussianModel, max_cosine_rows, min_mahalanobis_rows
from .rng import Xorshift64Star
from .scores import entropy_rows, softmax_rows

HEAD_MAGIC = b"GOENHEAD"
HEAD_VERSION = 1
LAYER_SIZES = (3, 64, 32, 1)
PARAM_COUNT = 2369  # 3*64+64 + 64*32+32 + 32*1+1
_HEAD_HEADER = struct.Struct("<8sIIIII")

_U_CLAMP = 1e-12


@dataclass(frozen=True)
class CueVector:
    """One sample's cues: m1 = log1p(min Mahalanobis), m2 = max mean
    affinity (in [-1, 1] by construction), m3 = predictive entropy.
    """

    m1: float
    m2: float
    m3: float

    def __post_init__(self):
        for name in ("m1", "m2", "m3"):
            if not math.isfinite(getattr(self, name)):
                raise NonFiniteInput(f"cue {name} is not finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.m1, self.m2, self.m3], dtype=np.float64)


def cues_to_matrix(cues) -> np.ndarray:
    """(N, 3) float64 matrix from a sequence of CueVector or a cue matrix."""
    if isinstance(cues, np.ndarray):
        m = np.asarray(cues, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != 3 or m.shape[0] == 0:
            raise DimensionMismatch(f"cue matrix must be (N, 3) with N >= 1, got {m.shape}")
        if not np.isfinite(m).all():
            raise NonFiniteInput("cue matrix contains NaN or infinity")
        return m
    if len(cues) == 0:
        raise EmptyInput("cue list is empty")
    return np.array([[c.m1, c.m2, c.m3] for c in cues], dtype=np.float64)


@dataclass(frozen=True)
class CalibrationHead:
    """Parameters of the 3 -> 64 -> 32 -> 1 head; arrays are read-only."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        shapes = {
            "w1": (64, 3), "b1": (64,),
            "w2": (32, 64), "b2": (32,),
            "w3": (1, 32), "b3": (1,),
        }
        for name, shape in shapes.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise InvariantViolation(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise InvariantViolation(f"{name} contains NaN or infinity")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def param_count(self) -> int:
        return PARAM_COUNT

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def flat(self) -> np.ndarray:
        """All parameters as one vector, layer order, weights before biases."""
        return np.concatenate([
            self.w1.ravel(), self.b1, self.w2.ravel(), self.b2,
            self.w3.ravel(), self.b3,
        ])

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "CalibrationHead":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (PARAM_COUNT,):
            raise InvariantViolation(f"expected {PARAM_COUNT} parameters, got {flat.shape}")
        pieces = []
        offset = 0
        for shape in ((64, 3), (64,), (32, 64), (32,), (1, 32), (1,)):
            size = int(np.prod(shape))
            pieces.append(flat[offset:offset + size].reshape(shape))
            offset += size
        return cls(*pieces)


def _init_from_rng(rng: Xorshift64Star) -> CalibrationHead:
    arrays = []
    for fan_in, fan_out in ((3, 64), (64, 32), (32, 1)):
        bound = math.sqrt(6.0 / fan_in)
        w = np.empty((fan_out, fan_in), dtype=np.float64)
        for i in range(fan_out):
            for j in range(fan_in):
                w[i, j] = (2.0 * rng.uniform() - 1.0) * bound
        arrays.append(w)
        arrays.append(np.zeros(fan_out, dtype=np.float64))
    return CalibrationHead(arrays[0], arrays[1], arrays[2], arrays[3],
                           arrays[4], arrays[5])


def head_init(seed: int) -> CalibrationHead:
    """Fresh head: weights uniform in +-sqrt(6 / fan_in), biases zero.

    Weight entries are drawn row-major per layer from Xorshift64Star(seed),
    so two calls with the same seed are bit-identical.
    """
    return _init_from_rng(Xorshift64Star(seed))


# ---------------------------------------------------------------------------
# forward / loss / backward
# ---------------------------------------------------------------------------

def _forward_matrix(head: CalibrationHead, m: np.ndarray):
    z1 = m @ head.w1.T + head.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ head.w2.T + head.b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ head.w3.T + head.b3
    u = 1.0 / (1.0 + np.exp(-z3[:, 0]))
    return u, (m, z1, a1, z2, a2)


def head_forward(head: CalibrationHead, cue: CueVector | np.ndarray) -> float:
    """Score one cue vector; output lies strictly inside (0, 1)."""
    m = cue.as_array() if isinstance(cue, CueVector) else np.asarray(cue, dtype=np.float64)
    if m.shape != (3,):
        raise DimensionMismatch(f"cue must have 3 components, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NonFiniteInput("cue contains NaN or infinity")
    u, _ = _forward_matrix(head, m[None, :])
    return float(u[0])


def head_forward_batch(head: CalibrationHead, cues) -> np.ndarray:
    """(N,) scores for a cue matrix or a sequence of CueVector."""
    m = cues if isinstance(cues, np.ndarray) else cues_to_matrix(cues)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != 3:
        raise DimensionMismatch(f"cues must be (N, 3), got {m.shape}")
    if not np.isfinite(m).all():
        raise NonFiniteInput("cues contain NaN or infinity")
    u, _ = _forward_matrix(head, m)
    return u


def bce_soft(u: float, target: float) -> float:
    """Binary cross entropy against a soft target; u clamped to (0, 1)."""
    if not (0.0 <= target <= 1.0):
        raise InvariantViolation(f"target must be in [0, 1], got {target}")
    if not math.isfinite(u):
        raise NonFiniteInput("score u is not finite")
    uc = min(max(u, _U_CLAMP), 1.0 - _U_CLAMP)
    return -target * math.log(uc) - (1.0 - target) * math.log(1.0 - uc)


def head_backward(head: CalibrationHead, cue: CueVector | np.ndarray,
                  target: float) -> dict[str, np.ndarray]:
    """Analytic gradient of bce_soft(head_forward(cue), target).

    Returns a dict keyed w1/b1/w2/b2/w3/b3 with arrays shaped like the
    parameters. The sigmoid-BCE combination collapses to u - target at the
    output pre-activation, which keeps the gradient finite even where the
    loss value itself is clamped.
    """
    m = cue.as_array() if isinstance(cue, CueVector) else np.asarray(cue, dtype=np.float64)
    if m.shape != (3,):
        raise DimensionMismatch(f"cue must have 3 components, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NonFiniteInput("cue contains NaN or infinity")
    if not (0.0 <= target <= 1.0):
        raise InvariantViolation(f"target must be in [0, 1], got {target}")
    u, (mm, z1, a1, z2, a2) = _forward_matrix(head, m[None, :])
    grads = _backward_matrix(head, (mm, z1, a1, z2, a2),
                             delta3=(u - target))
    return grads


def _backward_matrix(head: CalibrationHead, cache, delta3: np.ndarray):
    """Shared backward pass; delta3 is dL/dz3 per row, shape (B,)."""
    m, z1, a1, z2, a2 = cache
    d3 = delta3[:, None]                      # (B, 1)
    gw3 = d3.T @ a2                           # (1, 32)
    gb3 = d3.sum(axis=0)                      # (1,)
    da2 = d3 @ head.w3                        # (B, 32)
    dz2 = da2 * (z2 > 0.0)
    gw2 = dz2.T @ a1                          # (32, 64)
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ head.w2                       # (B, 64)
    dz1 = da1 * (z1 > 0.0)
    gw1 = dz1.T @ m                           # (64, 3)
    gb1 = dz1.sum(axis=0)
    return {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2, "w3": gw3, "b3": gb3}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for head training; defaults match the engine config."""

    learning_rate: float = 1e-3
    max_epochs: int = 20
    batch_size: int = 128
    target_id: float = 0.05
    target_ood: float = 0.95
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise InvariantViolation(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise InvariantViolation(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise InvariantViolation(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 < self.target_id < self.target_ood < 1.0):
            raise InvariantViolation(
                f"targets must satisfy 0 < target_id < target_ood < 1, got "
                f"({self.target_id}, {self.target_ood})"
            )
        if self.patience < 1:
            raise InvariantViolation(f"patience must be >= 1, got {self.patience}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    gap: float


@dataclass(frozen=True)
class TrainHistory:
    """Per-epoch loss and holdout gap, plus which epoch was kept."""

    records: tuple[EpochRecord, ...]
    best_epoch: int
    best_gap: float


_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


def _mean_bce(u: np.ndarray, target: float) -> float:
    uc = np.clip(u, _U_CLAMP, 1.0 - _U_CLAMP)
    return float((-target * np.log(uc) - (1.0 - target) * np.log(1.0 - uc)).mean())


def train_head(id_cues, ood_cues, holdout_id, holdout_ood,
               cfg: TrainConfig = TrainConfig()) -> tuple[CalibrationHead, TrainHistory]:
    """Train a head on ID and OOD cue pools with gap-based early stopping.

    Per epoch, max(1, ceil(n_id / batch_size)) optimisation steps run; each
    step draws batch_size ID indices and batch_size OOD indices uniformly
    with replacement from one PRNG stream (which the weight initialisation
    consumed first, so everything is a pure function of the inputs and
    cfg.seed). The step loss is mean BCE on the ID batch against target_id
    plus mean BCE on the OOD batch against target_ood.

    After each epoch the gap mean(u(holdout_ood)) - mean(u(holdout_id)) is
    measured; the parameters from the best-gap epoch are returned, and
    training stops early after `patience` epochs without improvement.
    """
    id_m = cues_to_matrix(id_cues)
    ood_m = cues_to_matrix(ood_cues)
    hold_id = cues_to_matrix(holdout_id)
    hold_ood = cues_to_matrix(holdout_ood)

    rng = Xorshift64Star(cfg.seed)
    head = _init_from_rng(rng)
    params = [p.copy() for p in head.params()]
    names = ["w1", "b1", "w2", "b2", "w3", "b3"]
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step_count = 0

    n_id, n_ood = id_m.shape[0], ood_m.shape[0]
    batch = cfg.batch_size
    steps_per_epoch = max(1, -(-n_id // batch))

    def current_head() -> CalibrationHead:
        return CalibrationHead(*[p.copy() for p in params])

    records: list[EpochRecord] = []
    best_gap = -np.inf
    best_params = [p.copy() for p in params]
    best_epoch = 0
    stale = 0

    for epoch in range(cfg.max_epochs):
        losses = np.empty(steps_per_epoch, dtype=np.float64)
        for step in range(steps_per_epoch):
            id_idx = rng.choice(n_id, batch)
            ood_idx = rng.choice(n_ood, batch)
            rows = np.vstack([id_m[id_idx], ood_m[ood_idx]])
            targets = np.concatenate([
                np.full(batch, cfg.target_id),
                np.full(batch, cfg.target_ood),
            ])
            weights = np.concatenate([
                np.full(batch, 1.0 / batch),
                np.full(batch, 1.0 / batch),
            ])
            live = CalibrationHead(*params)
            u, cache = _forward_matrix(live, rows)
            losses[step] = (_mean_bce(u[:batch], cfg.target_id)
                            + _mean_bce(u[batch:], cfg.target_ood))
            grads = _backward_matrix(live, cache, delta3=(u - targets) * weights)
            step_count += 1
            bc1 = 1.0 - _ADAM_B1 ** step_count
            bc2 = 1.0 - _ADAM_B2 ** step_count
            for i, name in enumerate(names):
                g = grads[name]
                m_state[i] = _ADAM_B1 * m_state[i] + (1.0 - _ADAM_B1) * g
                v_state[i] = _ADAM_B2 * v_state[i] + (1.0 - _ADAM_B2) * g * g
                step_dir = (m_state[i] / bc1) / (np.sqrt(v_state[i] / bc2) + _ADAM_EPS)
                params[i] = params[i] - cfg.learning_rate * step_dir

        epoch_head = current_head()
        gap = float(head_forward_batch(epoch_head, hold_ood).mean()
                    - head_forward_batch(epoch_head, hold_id).mean())
        records.append(EpochRecord(epoch=epoch, train_loss=float(losses.mean()),
                                   gap=gap))
        if gap > best_gap:
            best_gap = gap
            best_params = [p.copy() for p in params]
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    history = TrainHistory(records=tuple(records), best_epoch=best_epoch,
                           best_gap=best_gap)
    return CalibrationHead(*best_params), history


# ---------------------------------------------------------------------------
# cue construction
# ---------------------------------------------------------------------------

def build_cues(model: GaussianModel, dataset: FeatureSet) -> list[CueVector]:
    """Cue vectors for every row of a feature set.

    m1 = log1p(min Mahalanobis), m2 = max mean affinity, m3 = predictive
    entropy of softmax(logits). The set must carry logits.
    """
    if dataset.logits is None:
        raise MissingLogits(f"set {dataset.name!r} has no logits; the entropy cue needs them")
    if dataset.dim != model.dim:
        raise DimensionMismatch(f"set dim {dataset.dim} != model dim {model.dim}")
    m1 = np.log1p(min_mahalanobis_rows(model, dataset.features))
    m2 = max_cosine_rows(model, dataset.features)
    m3 = entropy_rows(softmax_rows(np.asarray(dataset.logits, dtype=np.float64)))
    return [CueVector(float(a), float(b), float(c)) for a, b, c in zip(m1, m2, m3)]


def build_cue_matrix(model: GaussianModel, dataset: FeatureSet) -> np.ndarray:
    """(N, 3) cue matrix; same definition as build_cues without the objects."""
    if dataset.logits is None:
        raise MissingLogits(f"set {dataset.name!r} has no logits; the entropy cue needs them")
    if dataset.dim != model.dim:
        raise DimensionMismatch(f"set dim {dataset.dim} != model dim {model.dim}")
    m1 = np.log1p(min_mahalanobis_rows(model, dataset.features))
    m2 = max_cosine_rows(model, dataset.features)
    m3 = entropy_rows(softmax_rows(np.asarray(dataset.logits, dtype=np.float64)))
    return np.column_stack([m1, m2, m3])


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_head(head: CalibrationHead, path: str | os.PathLike) -> None:
    """Write a GOENHEAD v1 file."""
    header = _HEAD_HEADER.pack(HEAD_MAGIC, HEAD_VERSION, *LAYER_SIZES)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(head.flat(), dtype="<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_head(path: str | os.PathLike) -> CalibrationHead:
    """Read a GOENHEAD v1 file and validate sizes and finiteness."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEAD_HEADER.size:
        raise TruncatedFile(f"{path}: shorter than the header")
    magic, version, *sizes = _HEAD_HEADER.unpack_from(blob, 0)
    if magic != HEAD_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {HEAD_MAGIC!r}")
    if version != HEAD_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, supported: {HEAD_VERSION}")
    if tuple(sizes) != LAYER_SIZES:
        raise InvariantViolation(f"{path}: layer sizes {tuple(sizes)}, expected {LAYER_SIZES}")
    expected = _HEAD_HEADER.size + PARAM_COUNT * 8
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: {len(blob)} bytes, header promises {expected}")
    if len(blob) > expected:
        raise InvariantViolation(f"{path}: trailing bytes after the payload")
    flat = np.frombuffer(blob, dtype="<f8", count=PARAM_COUNT,
                         offset=_HEAD_HEADER.size).astype(np.float64)
    if not np.isfinite(flat).all():
        raise InvariantViolation(f"{path}: parameters contain NaN or infinity")
    return CalibrationHead.from_flat(flat)
