#!/usr/bin/env python3
# Detection and calibration metrics on data small enough to check by hand.
# Convention everywhere: a score is an OOD score, higher = more suspicious.

import numpy as np

from goen import (
    accuracy,
    aupr,
    auroc,
    brier,
    detection_accuracy_youden,
    ece,
    evaluate_id,
    evaluate_ood,
    fpr_at_tpr,
    nll,
)

id_scores = [0.1, 0.2, 0.3, 0.4]
ood_scores = [0.35, 0.5, 0.6, 0.7]

# one OOD point (0.35) sits below one ID point (0.4): 15 of 16 pairs ordered
# correctly, one inverted, so AUROC = 15/16
print(f"auroc: {auroc(id_scores, ood_scores):.4f}  (expect {15 / 16:.4f})")
print(f"aupr:  {aupr(id_scores, ood_scores):.4f}")
print(f"fpr at 95% tpr: {fpr_at_tpr(id_scores, ood_scores):.4f}")
print(f"detection accuracy (best threshold): "
      f"{detection_accuracy_youden(id_scores, ood_scores):.4f}")

# perfect separation pins all four
sep = evaluate_ood([0.0, 0.1], [0.9, 1.0])
print(f"separated: auroc {sep.auroc:.1f}, aupr {sep.aupr:.1f}, "
      f"fpr {sep.fpr_at_95tpr:.1f}, det-acc {sep.detection_accuracy:.1f}")

# classifier-quality metrics take (N, C) probabilities plus integer labels
probs = np.array([
    [0.8, 0.2],
    [0.6, 0.4],
    [0.3, 0.7],
    [0.9, 0.1],
])
labels = np.array([0, 0, 1, 1])  # last row is a confident mistake

print(f"\naccuracy: {accuracy(probs, labels):.2f}")
print(f"nll:      {nll(probs, labels):.4f}")
print(f"brier:    {brier(probs, labels):.4f}")
print(f"ece(15):  {ece(probs, labels):.4f}")

bundle = evaluate_id(probs, labels)
print(f"bundle matches pieces: "
      f"{bundle.accuracy == accuracy(probs, labels) and bundle.nll == nll(probs, labels)}")
