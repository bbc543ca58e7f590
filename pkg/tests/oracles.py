"""Brute-force reference implementations for pinning expected values.

Everything here trades speed for obviousness: explicit pair loops, naive
double-loop covariance accumulation, explicit matrix inverses, dense grid
searches, central finite differences. Each function reaches its answer by
a different route than the library code so agreement is evidence, not
tautology.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# detection metrics
# ---------------------------------------------------------------------------

def auroc_pairs(id_scores, ood_scores) -> float:
    """Explicit Mann-Whitney pair count: wins plus half ties."""
    wins = 0.0
    for o in ood_scores:
        for i in id_scores:
            if o > i:
                wins += 1.0
            elif o == i:
                wins += 0.5
    return wins / (len(id_scores) * len(ood_scores))


def aupr_steps(id_scores, ood_scores) -> float:
    """Average precision by walking distinct thresholds top-down."""
    id_s = list(id_scores)
    ood_s = list(ood_scores)
    taus = sorted(set(id_s) | set(ood_s), reverse=True)
    total = 0.0
    prev_recall = 0.0
    for tau in taus:
        tp = sum(1 for o in ood_s if o >= tau)
        fp = sum(1 for i in id_s if i >= tau)
        precision = tp / (tp + fp)
        recall = tp / len(ood_s)
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return total


def fpr_at_tpr_scan(id_scores, ood_scores, target: float = 0.95) -> float:
    """FPR at the largest candidate threshold whose TPR reaches target.

    TPR as a function of the threshold only changes at observed OOD scores,
    so those are the complete candidate set.
    """
    id_s = list(id_scores)
    ood_s = list(ood_scores)
    best_tau = None
    for tau in sorted(set(ood_s)):
        tpr = sum(1 for o in ood_s if o >= tau) / len(ood_s)
        if tpr >= target and (best_tau is None or tau > best_tau):
            best_tau = tau
    fp = sum(1 for i in id_s if i >= best_tau)
    return fp / len(id_s)


def youden_scan(id_scores, ood_scores) -> float:
    """Detection accuracy at the TPR-FPR-maximising threshold.

    Candidates are the distinct observed scores; on ties the smallest
    threshold wins, matching the library convention.
    """
    id_s = list(id_scores)
    ood_s = list(ood_scores)
    best_tau = None
    best_j = -math.inf
    for tau in sorted(set(id_s) | set(ood_s)):
        tpr = sum(1 for o in ood_s if o >= tau) / len(ood_s)
        fpr = sum(1 for i in id_s if i >= tau) / len(id_s)
        if tpr - fpr > best_j:
            best_j = tpr - fpr
            best_tau = tau
    tp = sum(1 for o in ood_s if o >= best_tau)
    tn = sum(1 for i in id_s if i < best_tau)
    return (tp + tn) / (len(id_s) + len(ood_s))


# ---------------------------------------------------------------------------
# calibration metrics
# ---------------------------------------------------------------------------

def ece_binned(probs, labels, n_bins: int = 15) -> float:
    """Per-sample bin assignment by linear scan over the same float edges."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    edges = [b / n_bins for b in range(1, n_bins + 1)]
    members: list[list[int]] = [[] for _ in range(n_bins)]
    for row_idx in range(p.shape[0]):
        conf = float(p[row_idx].max())
        bin_idx = n_bins - 1
        for j, edge in enumerate(edges):
            if conf <= edge:
                bin_idx = j
                break
        members[bin_idx].append(row_idx)
    total = 0.0
    for rows in members:
        if not rows:
            continue
        acc = sum(1.0 for r in rows if int(p[r].argmax()) == int(y[r])) / len(rows)
        conf = sum(float(p[r].max()) for r in rows) / len(rows)
        total += (len(rows) / p.shape[0]) * abs(acc - conf)
    return total


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def covariance_double_loop(features, labels, num_classes: int,
                           epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """(means, covariance) by per-sample outer-product accumulation.

    Expects rows already L2-normalised; divides the pooled scatter by the
    total sample count (population convention) and adds epsilon on the
    diagonal.
    """
    z = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    n, d = z.shape
    means = np.zeros((num_classes, d))
    for c in range(num_classes):
        rows = [z[i] for i in range(n) if y[i] == c]
        means[c] = sum(rows) / len(rows)
    scatter = np.zeros((d, d))
    for i in range(n):
        diff = z[i] - means[y[i]]
        scatter += np.outer(diff, diff)
    cov = scatter / n + epsilon * np.eye(d)
    return means, cov


def mahalanobis_explicit_inverse(means, covariance, z) -> np.ndarray:
    """Per-class quadratic forms through an explicit matrix inverse."""
    inv = np.linalg.inv(np.asarray(covariance, dtype=np.float64))
    out = []
    for mu in np.asarray(means, dtype=np.float64):
        diff = np.asarray(z, dtype=np.float64) - mu
        out.append(float(diff @ inv @ diff))
    return np.array(out)


def power_iteration_extremes(matrix, iters: int = 20000,
                             seed: int = 7) -> tuple[float, float]:
    """(lambda_max, lambda_min) of a symmetric PD matrix.

    lambda_max by plain power iteration, lambda_min by inverse iteration
    with np.linalg.solve. Needs an eigengap to converge, so callers pick
    spectra accordingly.
    """
    a = np.asarray(matrix, dtype=np.float64)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        v = a @ v
        v /= np.linalg.norm(v)
    lam_max = float(v @ a @ v)
    w = rng.standard_normal(a.shape[0])
    w /= np.linalg.norm(w)
    for _ in range(iters):
        w = np.linalg.solve(a, w)
        w /= np.linalg.norm(w)
    lam_min = float(w @ a @ w)
    return lam_max, lam_min


# ---------------------------------------------------------------------------
# calibration head
# ---------------------------------------------------------------------------

def fd_gradient(loss_of_flat, flat: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar loss over a parameter vector."""
    grad = np.empty_like(flat)
    for j in range(flat.size):
        up = flat.copy()
        up[j] += step
        down = flat.copy()
        down[j] -= step
        grad[j] = (loss_of_flat(up) - loss_of_flat(down)) / (2.0 * step)
    return grad


def head_losses_batched(flats: np.ndarray, m: np.ndarray, t: float) -> np.ndarray:
    """BCE loss of the 3-64-32-1 head at many parameter vectors at once.

    Re-derives the forward pass from the flat layout (row-major weights,
    then biases, per layer) so the finite-difference check below does not
    route through the library's forward code.
    """
    w1 = flats[:, :192].reshape(-1, 64, 3)
    b1 = flats[:, 192:256]
    w2 = flats[:, 256:2304].reshape(-1, 32, 64)
    b2 = flats[:, 2304:2336]
    w3 = flats[:, 2336:2368].reshape(-1, 1, 32)
    b3 = flats[:, 2368:]
    z1 = np.einsum("bij,j->bi", w1, m) + b1
    a1 = np.maximum(z1, 0.0)
    z2 = np.einsum("bij,bj->bi", w2, a1) + b2
    a2 = np.maximum(z2, 0.0)
    z3 = np.einsum("bij,bj->bi", w3, a2)[:, 0] + b3[:, 0]
    u = 1.0 / (1.0 + np.exp(-z3))
    uc = np.clip(u, 1e-12, 1.0 - 1e-12)
    return -t * np.log(uc) - (1.0 - t) * np.log(1.0 - uc)


def fd_gradient_fast(flat: np.ndarray, m: np.ndarray, t: float,
                     step: float = 1e-4) -> np.ndarray:
    """Central differences over all parameters via the batched evaluator."""
    n = flat.size
    ups = np.tile(flat, (n, 1))
    ups[np.arange(n), np.arange(n)] += step
    downs = np.tile(flat, (n, 1))
    downs[np.arange(n), np.arange(n)] -= step
    return (head_losses_batched(ups, m, t)
            - head_losses_batched(downs, m, t)) / (2.0 * step)


# ---------------------------------------------------------------------------
# temperature
# ---------------------------------------------------------------------------

def grid_temperature(logits, labels, lo: float = 0.05, hi: float = 20.0,
                     points: int = 4000) -> float:
    """Dense log-space grid search for the NLL-minimising temperature."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    best_t, best_nll = None, math.inf
    for lnt in np.linspace(math.log(lo), math.log(hi), points):
        t = math.exp(lnt)
        scaled = z / t
        scaled = scaled - scaled.max(axis=1, keepdims=True)
        p = np.exp(scaled)
        p /= p.sum(axis=1, keepdims=True)
        val = float(-np.log(np.maximum(p[np.arange(z.shape[0]), y], 1e-12)).mean())
        if val < best_nll:
            best_nll, best_t = val, t
    return best_t
