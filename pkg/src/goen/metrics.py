"""Detection and calibration metrics with pinned tie conventions.

OOD detection metrics treat the OOD sample as the positive class and
follow "score >= threshold means flag as OOD" everywhere a threshold
appears. Tie handling is part of the contract:

* auroc: Mann-Whitney with ties credited 0.5;
* aupr: average precision with tied scores grouped at one threshold;
* fpr_at_tpr: largest threshold reaching the TPR target;
* detection_accuracy_youden: threshold maximising TPR - FPR, smallest
  such threshold on ties, candidates are the distinct observed scores.

Calibration metrics (ece/nll/brier/accuracy) operate on probability rows.
ECE uses equal-width bins, left-open right-closed, so a confidence exactly
on an edge falls in the lower bin and confidence 0 joins the first bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.stats

from .errors import (
    BadLabel,
    DimensionMismatch,
    EmptyInput,
    InvariantViolation,
    NonFiniteInput,
    NotSimplex,
)
from .scores import SIMPLEX_TOL


def _scores_1d(x, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"{what} must be 1-d, got shape {v.shape}")
    if v.size == 0:
        raise EmptyInput(f"{what} is empty")
    if not np.isfinite(v).all():
        raise NonFiniteInput(f"{what} contain NaN or infinity")
    return v


def _prob_rows(probs, labels, what: str = "probs") -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2:
        raise DimensionMismatch(f"{what} must be (N, C), got shape {p.shape}")
    if p.shape[0] == 0:
        raise EmptyInput(f"{what} has no rows")
    if y.shape != (p.shape[0],):
        raise DimensionMismatch(f"labels shape {y.shape} does not match N={p.shape[0]}")
    if not np.isfinite(p).all():
        raise NonFiniteInput(f"{what} contain NaN or infinity")
    if float(p.min()) < -1e-12:
        raise NotSimplex(f"{what} have a negative entry ({p.min():.3e})")
    sums = p.sum(axis=1)
    worst = float(np.abs(sums - 1.0).max())
    if worst > SIMPLEX_TOL:
        raise NotSimplex(f"{what} row sum off 1 by {worst:.3e}")
    if y.min() < 0 or y.max() >= p.shape[1]:
        raise BadLabel(f"labels must lie in [0, {p.shape[1]})")
    return p, y.astype(np.int64)


# ---------------------------------------------------------------------------
# detection metrics
# ---------------------------------------------------------------------------

def auroc(id_scores, ood_scores) -> float:
    """P(ood score > id score) + 0.5 P(equal), OOD positive."""
    i = _scores_1d(id_scores, "id_scores")
    o = _scores_1d(ood_scores, "ood_scores")
    ranks = scipy.stats.rankdata(np.concatenate([i, o]), method="average")
    m = o.size
    u = ranks[i.size:].sum() - m * (m + 1) / 2.0
    return float(u / (i.size * m))


def aupr(id_scores, ood_scores) -> float:
    """Average precision over descending thresholds, ties grouped."""
    i = _scores_1d(id_scores, "id_scores")
    o = _scores_1d(ood_scores, "ood_scores")
    scores = np.concatenate([i, o])
    positive = np.concatenate([np.zeros(i.size, bool), np.ones(o.size, bool)])
    order = np.argsort(-scores, kind="stable")
    scores, positive = scores[order], positive[order]
    # group indices where a strictly lower score starts
    boundary = np.flatnonzero(np.diff(scores) != 0.0)
    ends = np.concatenate([boundary + 1, [scores.size]])
    tp = np.cumsum(positive)[ends - 1]
    total = ends.astype(np.int64)
    precision = tp / total
    recall = tp / o.size
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> float:
    """FPR at the largest threshold whose TPR still reaches the target."""
    i = _scores_1d(id_scores, "id_scores")
    o = _scores_1d(ood_scores, "ood_scores")
    if not (0.0 < tpr_target <= 1.0):
        raise InvariantViolation(f"tpr_target must be in (0, 1], got {tpr_target}")
    uniq = np.unique(o)
    o_sorted = np.sort(o)
    tail = o.size - np.searchsorted(o_sorted, uniq, side="left")
    tpr = tail / o.size
    qualifying = np.flatnonzero(tpr >= tpr_target)
    tau = uniq[qualifying[-1]]  # uniq ascending, so the last qualifier is largest
    i_sorted = np.sort(i)
    false_pos = i.size - np.searchsorted(i_sorted, tau, side="left")
    return float(false_pos / i.size)


def detection_accuracy_youden(id_scores, ood_scores) -> float:
    """Accuracy at the Youden-optimal threshold (smallest tau on ties)."""
    i = _scores_1d(id_scores, "id_scores")
    o = _scores_1d(ood_scores, "ood_scores")
    taus = np.unique(np.concatenate([i, o]))
    i_sorted, o_sorted = np.sort(i), np.sort(o)
    tp = o.size - np.searchsorted(o_sorted, taus, side="left")
    fp = i.size - np.searchsorted(i_sorted, taus, side="left")
    youden = tp / o.size - fp / i.size
    best = int(np.argmax(youden))  # first occurrence = smallest tau
    correct = tp[best] + (i.size - fp[best])
    return float(correct / (i.size + o.size))


# ---------------------------------------------------------------------------
# calibration metrics
# ---------------------------------------------------------------------------

def ece(probs, labels, n_bins: int = 15) -> float:
    """Expected calibration error over equal-width confidence bins.

    Bin b covers ((b-1)/n_bins, b/n_bins]; a confidence of exactly 0 is
    assigned to bin 1. Empty bins contribute nothing.
    """
    if n_bins < 1:
        raise InvariantViolation(f"n_bins must be >= 1, got {n_bins}")
    p, y = _prob_rows(probs, labels)
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == y)
    edges = np.arange(1, n_bins + 1) / n_bins
    idx = np.searchsorted(edges, conf, side="left")
    idx = np.minimum(idx, n_bins - 1)
    total = 0.0
    n = p.shape[0]
    for b in range(n_bins):
        member = idx == b
        count = int(member.sum())
        if count == 0:
            continue
        acc_b = float(correct[member].mean())
        conf_b = float(conf[member].mean())
        total += (count / n) * abs(acc_b - conf_b)
    return float(total)


def nll(probs, labels) -> float:
    """Mean negative log-likelihood, probabilities clamped at 1e-12."""
    p, y = _prob_rows(probs, labels)
    picked = np.maximum(p[np.arange(p.shape[0]), y], 1e-12)
    return float(-np.log(picked).mean())


def brier(probs, labels) -> float:
    """Mean squared distance to the one-hot target; range [0, 2]."""
    p, y = _prob_rows(probs, labels)
    onehot = np.zeros_like(p)
    onehot[np.arange(p.shape[0]), y] = 1.0
    return float(((p - onehot) ** 2).sum(axis=1).mean())


def accuracy(scores, labels) -> float:
    """Top-1 accuracy of argmax over rows; ties go to the lowest index.

    Accepts probabilities or logits; rows are not required to be simplexes.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 2 or s.shape[0] == 0:
        raise DimensionMismatch(f"scores must be (N, C) with N >= 1, got {s.shape}")
    if y.shape != (s.shape[0],):
        raise DimensionMismatch(f"labels shape {y.shape} does not match N={s.shape[0]}")
    if not np.isfinite(s).all():
        raise NonFiniteInput("scores contain NaN or infinity")
    if y.min() < 0 or y.max() >= s.shape[1]:
        raise BadLabel(f"labels must lie in [0, {s.shape[1]})")
    return float((s.argmax(axis=1) == y).mean())


# ---------------------------------------------------------------------------
# result bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OODEval:
    """Detection metrics of one rule against one OOD set."""

    auroc: float
    aupr: float
    fpr_at_95tpr: float
    detection_accuracy: float

    def as_dict(self) -> dict[str, float]:
        return {
            "auroc": self.auroc,
            "aupr": self.aupr,
            "fpr_at_95tpr": self.fpr_at_95tpr,
            "detection_accuracy": self.detection_accuracy,
        }


@dataclass(frozen=True)
class IDEval:
    """Classifier quality on the ID test set."""

    accuracy: float
    ece: float
    nll: float
    brier: float

    def as_dict(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "ece": self.ece,
            "nll": self.nll,
            "brier": self.brier,
        }


def evaluate_ood(id_scores, ood_scores, tpr_target: float = 0.95) -> OODEval:
    """All four detection metrics in one bundle."""
    return OODEval(
        auroc=auroc(id_scores, ood_scores),
        aupr=aupr(id_scores, ood_scores),
        fpr_at_95tpr=fpr_at_tpr(id_scores, ood_scores, tpr_target),
        detection_accuracy=detection_accuracy_youden(id_scores, ood_scores),
    )


def evaluate_id(probs, labels, n_bins: int = 15) -> IDEval:
    """Accuracy plus the three calibration metrics in one bundle."""
    return IDEval(
        accuracy=accuracy(probs, labels),
        ece=ece(probs, labels, n_bins),
        nll=nll(probs, labels),
        brier=brier(probs, labels),
    )
