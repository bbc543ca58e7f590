"""Score rule hand cases, temperature fitting, and probability-stack I/O."""

import math

import numpy as np
import pytest

from goen import (
    AlphaBelowOne,
    BadMagic,
    DegenerateInput,
    DimensionMismatch,
    EmptyInput,
    InvariantViolation,
    KTooLarge,
    NotSimplex,
    ProbStack,
    TooFewMembers,
    TruncatedFile,
    Xorshift64Star,
    energy_rows,
    energy_score,
    ensemble_variance,
    ensemble_variance_rows,
    entropy_rows,
    fit_temperature,
    gate_rows,
    gate_uncertainty,
    knn_score,
    knn_scores,
    load_prob_stack,
    max_softmax_rows,
    max_softmax_uncertainty,
    mutual_information,
    mutual_information_rows,
    predictive_entropy,
    save_prob_stack,
    softmax_rows,
    temperature_scale,
    vacuity,
    vacuity_rows,
)

from oracles import grid_temperature


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def test_max_softmax_uncertainty_cases():
    assert max_softmax_uncertainty(np.array([1.0, 0.0, 0.0])) == 0.0
    assert max_softmax_uncertainty(np.full(10, 0.1)) == pytest.approx(0.9)
    assert max_softmax_uncertainty(np.array([0.7, 0.2, 0.1])) == pytest.approx(0.3)


def test_predictive_entropy_cases():
    assert predictive_entropy(np.array([1.0, 0.0])) == 0.0
    assert predictive_entropy(np.full(10, 0.1)) == pytest.approx(math.log(10.0))
    assert predictive_entropy(np.array([0.5, 0.5])) == pytest.approx(math.log(2.0))


def test_temperature_scale_hand_case():
    p = temperature_scale(np.array([2.0, 0.0]), 1.0)
    assert p == pytest.approx([0.880797, 0.119203], abs=1e-6)


def test_temperature_scale_high_t_near_uniform():
    p = temperature_scale(np.array([10.0, -10.0, 3.0]), 1e6)
    assert np.abs(p - 1.0 / 3.0).max() < 1e-5


def test_temperature_scale_preserves_argmax():
    z = np.array([0.3, 2.0, -1.0, 1.9])
    for t in (0.05, 0.5, 1.0, 7.0, 20.0):
        assert int(np.argmax(temperature_scale(z, t))) == 1


def test_temperature_scale_rejects_bad_t():
    with pytest.raises(InvariantViolation):
        temperature_scale(np.array([1.0, 0.0]), 0.0)


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def test_energy_zero_logits():
    assert energy_score(np.zeros(10), 1.0) == pytest.approx(-math.log(10.0))


def test_energy_no_overflow():
    got = energy_score(np.array([1000.0, 0.0]), 1.0)
    assert math.isfinite(got)
    assert got == pytest.approx(-1000.0, abs=1e-9)


def test_energy_shift_property():
    z = np.array([1.0, -2.0, 0.5])
    base = energy_score(z, 1.0)
    shifted = energy_score(z + 7.0, 1.0)
    assert shifted == pytest.approx(base - 7.0, abs=1e-12)


def test_energy_temperature_scaling():
    z = np.array([2.0, 1.0, 0.0])
    t = 2.5
    want = -t * math.log(sum(math.exp(v / t) for v in z))
    assert energy_score(z, t) == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------------------
# knn
# ---------------------------------------------------------------------------

def test_knn_self_match():
    train = np.eye(2)
    assert knn_score(train, np.array([1.0, 0.0]), 1) == pytest.approx(0.0)


def test_knn_orthogonal_second_neighbour():
    train = np.eye(2)
    assert knn_score(train, np.array([1.0, 0.0]), 2) == pytest.approx(1.0)


def test_knn_non_decreasing_in_k():
    rng = Xorshift64Star(0)
    train = rng.normals((25, 4))
    train /= np.linalg.norm(train, axis=1, keepdims=True)
    z = rng.normals(4)
    values = [knn_score(train, z, k) for k in range(1, 26)]
    assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))


def test_knn_errors():
    train = np.eye(3)
    with pytest.raises(KTooLarge):
        knn_score(train, np.ones(3), 4)
    with pytest.raises(InvariantViolation):
        knn_score(train, np.ones(3), 0)
    with pytest.raises(InvariantViolation):
        knn_score(2.0 * np.eye(3), np.ones(3), 1)
    with pytest.raises(DimensionMismatch):
        knn_score(train, np.ones(2), 1)
    with pytest.raises(EmptyInput):
        knn_score(np.zeros((0, 3)), np.ones(3), 1)


def test_knn_batch_matches_scalar():
    rng = Xorshift64Star(1)
    train = rng.normals((30, 5))
    train /= np.linalg.norm(train, axis=1, keepdims=True)
    queries = rng.normals((11, 5))
    batch = knn_scores(train, queries, k=3)
    singles = [knn_score(train, q, 3) for q in queries]
    assert np.allclose(batch, singles, atol=1e-12)


# ---------------------------------------------------------------------------
# ensemble rules
# ---------------------------------------------------------------------------

def test_mutual_information_cases():
    same = np.tile([0.6, 0.4], (4, 1))
    assert mutual_information(same) == 0.0
    disagree = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert mutual_information(disagree) == pytest.approx(math.log(2.0))


def test_mutual_information_bounded_by_mean_entropy():
    rng = Xorshift64Star(2)
    raw = rng.uniforms((5, 3)) + 1e-3
    stack = raw / raw.sum(axis=1, keepdims=True)
    mean = stack.mean(axis=0)
    h_mean = -(mean * np.log(mean)).sum()
    assert 0.0 <= mutual_information(stack) <= h_mean + 1e-12


def test_ensemble_variance_cases():
    same = np.tile([0.3, 0.7], (3, 1))
    assert ensemble_variance(same) == 0.0
    disagree = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert ensemble_variance(disagree) == pytest.approx(0.5)


def test_ensemble_variance_member_permutation_invariant():
    rng = Xorshift64Star(3)
    raw = rng.uniforms((4, 5)) + 1e-3
    stack = raw / raw.sum(axis=1, keepdims=True)
    assert ensemble_variance(stack) == pytest.approx(
        ensemble_variance(stack[::-1]), abs=1e-15
    )


def test_stack_rules_reject_single_member():
    with pytest.raises(TooFewMembers):
        mutual_information(np.array([[1.0, 0.0]]))
    with pytest.raises(TooFewMembers):
        ensemble_variance(np.array([[1.0, 0.0]]))


# ---------------------------------------------------------------------------
# evidential and gating
# ---------------------------------------------------------------------------

def test_vacuity_cases():
    assert vacuity(np.ones(10)) == pytest.approx(1.0)
    assert vacuity(np.full(10, 10.0)) == pytest.approx(0.1)


def test_vacuity_strictly_decreasing_in_alpha():
    base = np.ones(5)
    prev = vacuity(base)
    for bump in (0.5, 1.0, 3.0):
        cur = base.copy()
        cur[2] += bump
        val = vacuity(cur)
        assert val < prev
        prev = val


def test_vacuity_rejects_alpha_below_one():
    with pytest.raises(AlphaBelowOne):
        vacuity(np.array([1.0, 0.5]))


def test_vacuity_rows_relu_plus_one():
    logits = np.array([[9.0, -3.0], [0.0, 0.0]])
    # alphas: (10, 1) -> 2/11; (1, 1) -> 1
    got = vacuity_rows(logits)
    assert got == pytest.approx([2.0 / 11.0, 1.0])


def test_gate_uncertainty_cases():
    assert gate_uncertainty(np.array([1.0, 0.0, 0.0])) == 0.0
    assert gate_uncertainty(np.full(5, 0.2)) == pytest.approx(0.8)
    assert gate_uncertainty(np.array([0.6, 0.4])) == pytest.approx(0.4)


def test_gate_uncertainty_rejects_non_simplex():
    with pytest.raises(NotSimplex):
        gate_uncertainty(np.array([0.6, 0.6]))


# ---------------------------------------------------------------------------
# temperature fitting
# ---------------------------------------------------------------------------

def calibrated_batch():
    # label counts proportional to softmax(z) make T=1 exactly optimal
    row = np.log(np.array([0.8, 0.1, 0.1]))
    logits = np.tile(row, (10, 1))
    labels = np.array([0] * 8 + [1, 2])
    return logits, labels


def test_fit_temperature_recovers_one():
    logits, labels = calibrated_batch()
    t = fit_temperature(logits, labels)
    assert abs(t - 1.0) < 1e-2
    assert abs(t - grid_temperature(logits, labels)) < 5e-3


def test_fit_temperature_scaling_argument():
    logits, labels = calibrated_batch()
    t3 = fit_temperature(3.0 * logits, labels)
    assert abs(t3 - 3.0) < 3e-2
    assert abs(t3 - grid_temperature(3.0 * logits, labels)) < 2e-2


def test_fit_temperature_never_worse_than_unit():
    rng = Xorshift64Star(4)
    logits = rng.normals((50, 4)) * 3.0
    labels = np.array([rng.below(4) for _ in range(50)])
    t = fit_temperature(logits, labels)
    from goen.scores import _nll_at_temperature
    assert _nll_at_temperature(logits, labels, t) <= _nll_at_temperature(
        logits, labels, 1.0
    ) + 1e-9


def test_fit_temperature_degenerate_rows():
    with pytest.raises(DegenerateInput):
        fit_temperature(np.ones((3, 4)), np.array([0, 1, 2]))


# ---------------------------------------------------------------------------
# row-wise helpers
# ---------------------------------------------------------------------------

def test_row_helpers_agree_with_scalars():
    rng = Xorshift64Star(5)
    logits = rng.normals((9, 6)) * 2.0
    probs = softmax_rows(logits)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    for i in range(9):
        assert max_softmax_rows(probs)[i] == pytest.approx(
            max_softmax_uncertainty(probs[i]), abs=1e-12
        )
        assert entropy_rows(probs)[i] == pytest.approx(
            predictive_entropy(probs[i]), abs=1e-12
        )
        assert energy_rows(logits)[i] == pytest.approx(
            energy_score(logits[i]), abs=1e-12
        )


# ---------------------------------------------------------------------------
# probability stacks
# ---------------------------------------------------------------------------

def valid_stack(m=3, n=8, c=4, seed=6):
    rng = Xorshift64Star(seed)
    raw = rng.uniforms((m, n, c)) + 1e-3
    return ProbStack(probs=raw / raw.sum(axis=2, keepdims=True))


def test_prob_stack_shape_and_rules():
    stack = valid_stack()
    assert stack.members == 3
    assert stack.n == 8
    assert stack.num_classes == 4
    mi = mutual_information_rows(stack)
    ev = ensemble_variance_rows(stack)
    assert mi.shape == (8,) and ev.shape == (8,)
    assert (mi >= 0).all() and (ev >= 0).all()
    for i in range(8):
        assert mi[i] == pytest.approx(mutual_information(stack.probs[:, i]), abs=1e-12)
        assert ev[i] == pytest.approx(ensemble_variance(stack.probs[:, i]), abs=1e-12)


def test_prob_stack_validation():
    with pytest.raises(NotSimplex):
        ProbStack(probs=np.full((2, 2, 2), 0.7))
    with pytest.raises(DimensionMismatch):
        ProbStack(probs=np.full((2, 2), 0.5))


def test_gate_rows_requires_single_member():
    single = ProbStack(probs=valid_stack().probs[:1])
    got = gate_rows(single)
    assert np.allclose(got, 1.0 - single.probs[0].max(axis=1))
    with pytest.raises(InvariantViolation):
        gate_rows(valid_stack())


def test_stack_rules_reject_single_member_stack():
    single = ProbStack(probs=valid_stack().probs[:1])
    with pytest.raises(TooFewMembers):
        mutual_information_rows(single)
    with pytest.raises(TooFewMembers):
        ensemble_variance_rows(single)


def test_prob_stack_round_trip(tmp_path):
    stack = valid_stack()
    path = str(tmp_path / "stack.goenprob")
    save_prob_stack(stack, path)
    back = load_prob_stack(path)
    assert back.probs.shape == stack.probs.shape
    # storage is f32, so round-tripping is exact at f32 resolution
    assert np.array_equal(
        np.asarray(back.probs, dtype=np.float32),
        np.asarray(stack.probs, dtype=np.float32),
    )


def test_prob_stack_file_validation(tmp_path):
    bad_magic = tmp_path / "bad.goenprob"
    bad_magic.write_bytes(b"NOTAPROB" + bytes(20))
    with pytest.raises(BadMagic):
        load_prob_stack(str(bad_magic))
    good = tmp_path / "ok.goenprob"
    save_prob_stack(valid_stack(), str(good))
    truncated = tmp_path / "short.goenprob"
    truncated.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(TruncatedFile):
        load_prob_stack(str(truncated))
    trailing = tmp_path / "long.goenprob"
    trailing.write_bytes(good.read_bytes() + b"xx")
    with pytest.raises(InvariantViolation):
        load_prob_stack(str(trailing))
