"""Metric hand cases, tie conventions, and exact agreement with oracles."""

import math

import numpy as np
import pytest

from goen import (
    BadLabel,
    DimensionMismatch,
    EmptyInput,
    InvariantViolation,
    NonFiniteInput,
    NotSimplex,
    Xorshift64Star,
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

from oracles import auroc_pairs, aupr_steps, ece_binned, fpr_at_tpr_scan, youden_scan


# ---------------------------------------------------------------------------
# auroc
# ---------------------------------------------------------------------------

def test_auroc_perfect_separation():
    assert auroc([0.1, 0.2], [0.8, 0.9]) == 1.0


def test_auroc_full_tie():
    assert auroc([0.5], [0.5]) == 0.5


def test_auroc_hand_case_three_quarters():
    # pairs: (0.4>0.1), (0.4<0.6), (0.9>0.1), (0.9>0.6) -> 3 wins of 4
    assert auroc([0.1, 0.6], [0.4, 0.9]) == 0.75


def test_auroc_complement_identity():
    # u + u' = n*m exactly, but the two divisions round independently,
    # so the identity holds to one ulp rather than bit-exactly
    rng = Xorshift64Star(0)
    ids = rng.uniforms(37)
    oods = rng.uniforms(23)
    assert auroc(ids, oods) == pytest.approx(1.0 - auroc(oods, ids), abs=5e-16)


def test_auroc_input_order_invariance():
    rng = Xorshift64Star(1)
    ids = rng.uniforms(20)
    oods = rng.uniforms(20)
    assert auroc(ids, oods) == auroc(ids[::-1], oods[::-1])


# ---------------------------------------------------------------------------
# aupr
# ---------------------------------------------------------------------------

def test_aupr_perfect():
    assert aupr([0.1, 0.2, 0.3], [0.8, 0.9]) == 1.0


def test_aupr_single_positive_on_top():
    assert aupr([0.1, 0.2, 0.3, 0.4], [0.9]) == 1.0


def test_aupr_uninformative_scores_near_prevalence():
    rng = Xorshift64Star(2)
    ids = rng.uniforms(3000)
    oods = rng.uniforms(3000)
    assert abs(aupr(ids, oods) - 0.5) < 0.05


def test_aupr_matches_step_oracle():
    rng = Xorshift64Star(3)
    for _ in range(20):
        ids = np.round(rng.uniforms(15), 1)  # rounding forces ties
        oods = np.round(rng.uniforms(12), 1)
        assert aupr(ids, oods) == pytest.approx(aupr_steps(ids, oods), abs=1e-12)


# ---------------------------------------------------------------------------
# fpr at tpr
# ---------------------------------------------------------------------------

def test_fpr_hand_case():
    ood = [float(v) for v in range(10, 201, 10)]
    ids = [5.0, 15.0, 25.0]
    # tau=20 keeps 19/20 = 0.95 of OOD above; id 25 is the one false positive
    assert fpr_at_tpr(ids, ood, 0.95) == pytest.approx(1.0 / 3.0)


def test_fpr_perfect_separation():
    assert fpr_at_tpr([1.0, 2.0], [5.0, 6.0, 7.0], 0.95) == 0.0


def test_fpr_identical_multisets_fpr_equals_tpr():
    scores = [1.0, 2.0, 3.0, 4.0, 5.0]
    got = fpr_at_tpr(scores, scores, 0.95)
    # tau is the smallest score (only threshold reaching 0.95 TPR), so every
    # id point is flagged: FPR = TPR = 1
    assert got == 1.0


def test_fpr_matches_scan_oracle_exactly():
    rng = Xorshift64Star(4)
    for _ in range(50):
        n_i = 2 + rng.below(40)
        n_o = 2 + rng.below(40)
        ids = np.round(rng.uniforms(n_i) * 5, 1)
        oods = np.round(rng.uniforms(n_o) * 5, 1)
        assert fpr_at_tpr(ids, oods, 0.95) == fpr_at_tpr_scan(ids, oods, 0.95)


def test_fpr_rejects_bad_target():
    with pytest.raises(InvariantViolation):
        fpr_at_tpr([1.0], [2.0], 0.0)
    with pytest.raises(InvariantViolation):
        fpr_at_tpr([1.0], [2.0], 1.5)


# ---------------------------------------------------------------------------
# youden detection accuracy
# ---------------------------------------------------------------------------

def test_youden_perfect():
    assert detection_accuracy_youden([1.0, 2.0], [5.0, 6.0]) == 1.0


def test_youden_identical_multisets():
    scores = [1.0, 2.0, 3.0]
    assert detection_accuracy_youden(scores, scores) == 0.5


def test_youden_hand_case():
    # tau*=2.5: TP=3 (all of 2.5,3.5,4), TN=2 (1,2), accuracy 5/6
    got = detection_accuracy_youden([1.0, 2.0, 3.0], [2.5, 3.5, 4.0])
    assert got == pytest.approx(5.0 / 6.0)


def test_youden_matches_scan_oracle_exactly():
    rng = Xorshift64Star(5)
    for _ in range(50):
        n_i = 2 + rng.below(40)
        n_o = 2 + rng.below(40)
        ids = np.round(rng.uniforms(n_i) * 5, 1)
        oods = np.round(rng.uniforms(n_o) * 5, 1)
        assert detection_accuracy_youden(ids, oods) == youden_scan(ids, oods)


# ---------------------------------------------------------------------------
# ece
# ---------------------------------------------------------------------------

def test_ece_confident_correct():
    probs = np.tile([1.0, 0.0], (5, 1))
    assert ece(probs, np.zeros(5, dtype=int)) == 0.0


def test_ece_confident_wrong():
    probs = np.tile([1.0, 0.0], (5, 1))
    assert ece(probs, np.ones(5, dtype=int)) == 1.0


def test_ece_hand_case_single_bin():
    # all four rows at confidence 0.8 (bin (11/15, 12/15]), half correct
    probs = np.tile([0.8, 0.2], (4, 1))
    labels = np.array([0, 0, 1, 1])
    assert ece(probs, labels) == pytest.approx(0.3)


def test_ece_edge_confidence_falls_in_lower_bin():
    # conf exactly 1/15 belongs to bin 1 under the left-open convention;
    # with C=15 the uniform row has confidence 1/15 and accuracy 1/15 on
    # average, here forced correct so the gap is 1 - 1/15 in that bin
    c = 15
    probs = np.tile(np.full(c, 1.0 / c), (3, 1))
    labels = np.zeros(3, dtype=int)
    got = ece(probs, labels, n_bins=15)
    assert got == pytest.approx(abs(1.0 - 1.0 / c))


def test_ece_matches_binned_oracle():
    rng = Xorshift64Star(6)
    for _ in range(10):
        n, c = 50, 4
        raw = rng.uniforms((n, c)) + 1e-3
        probs = raw / raw.sum(axis=1, keepdims=True)
        labels = np.array([rng.below(c) for _ in range(n)])
        assert ece(probs, labels) == pytest.approx(
            ece_binned(probs, labels), abs=1e-12
        )


def test_ece_rejects_bad_bins():
    with pytest.raises(InvariantViolation):
        ece(np.array([[1.0, 0.0]]), np.array([0]), n_bins=0)


# ---------------------------------------------------------------------------
# nll / brier / accuracy
# ---------------------------------------------------------------------------

def test_nll_certain_and_uniform():
    assert nll(np.array([[1.0, 0.0]]), np.array([0])) == 0.0
    probs = np.tile(np.full(10, 0.1), (3, 1))
    assert nll(probs, np.array([0, 5, 9])) == pytest.approx(math.log(10.0))


def test_nll_is_mean_of_per_sample_values():
    probs = np.array([[0.9, 0.1], [0.4, 0.6]])
    labels = np.array([0, 1])
    want = (-math.log(0.9) - math.log(0.6)) / 2.0
    assert nll(probs, labels) == pytest.approx(want)


def test_nll_clamps_zero_probability():
    probs = np.array([[1.0, 0.0]])
    got = nll(probs, np.array([1]))
    assert got == pytest.approx(-math.log(1e-12))


def test_brier_cases():
    assert brier(np.array([[1.0, 0.0]]), np.array([0])) == 0.0
    assert brier(np.array([[1.0, 0.0]]), np.array([1])) == 2.0
    probs = np.tile(np.full(10, 0.1), (2, 1))
    assert brier(probs, np.array([0, 3])) == pytest.approx(0.9)


def test_accuracy_cases():
    one_hot = np.eye(3)
    assert accuracy(one_hot, np.array([0, 1, 2])) == 1.0
    assert accuracy(one_hot, np.array([1, 2, 0])) == 0.0
    # argmax tie goes to the lowest index, which matches label 0
    assert accuracy(np.array([[0.5, 0.5]]), np.array([0])) == 1.0
    assert accuracy(np.array([[0.5, 0.5]]), np.array([1])) == 0.0


# ---------------------------------------------------------------------------
# bundles and error taxonomy
# ---------------------------------------------------------------------------

def test_evaluate_ood_bundle_matches_scalars():
    rng = Xorshift64Star(7)
    ids = rng.uniforms(30)
    oods = rng.uniforms(30) + 0.3
    bundle = evaluate_ood(ids, oods)
    assert bundle.auroc == auroc(ids, oods)
    assert bundle.aupr == aupr(ids, oods)
    assert bundle.fpr_at_95tpr == fpr_at_tpr(ids, oods, 0.95)
    assert bundle.detection_accuracy == detection_accuracy_youden(ids, oods)
    d = bundle.as_dict()
    assert set(d) == {"auroc", "aupr", "fpr_at_95tpr", "detection_accuracy"}


def test_evaluate_id_bundle_matches_scalars():
    rng = Xorshift64Star(8)
    raw = rng.uniforms((40, 5)) + 1e-3
    probs = raw / raw.sum(axis=1, keepdims=True)
    labels = np.array([rng.below(5) for _ in range(40)])
    bundle = evaluate_id(probs, labels)
    assert bundle.accuracy == accuracy(probs, labels)
    assert bundle.ece == ece(probs, labels)
    assert bundle.nll == nll(probs, labels)
    assert bundle.brier == brier(probs, labels)


def test_error_taxonomy():
    with pytest.raises(EmptyInput):
        auroc([], [1.0])
    with pytest.raises(NonFiniteInput):
        auroc([np.nan], [1.0])
    with pytest.raises(DimensionMismatch):
        auroc(np.ones((2, 2)), [1.0])
    with pytest.raises(NotSimplex):
        nll(np.array([[0.7, 0.7]]), np.array([0]))
    with pytest.raises(NotSimplex):
        nll(np.array([[1.1, -0.1]]), np.array([0]))
    with pytest.raises(BadLabel):
        nll(np.array([[0.5, 0.5]]), np.array([2]))
    with pytest.raises(DimensionMismatch):
        ece(np.array([[0.5, 0.5]]), np.array([0, 1]))
