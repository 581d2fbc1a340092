import math

import numpy as np
import pytest

from convctc.ctc import (
    NEG_INF,
    beam_decode,
    ctc_loss,
    extend_labels,
    greedy_decode,
    log_softmax,
    min_frames,
)
from convctc.exceptions import CTCInfeasibleError
from oracles import (
    argmax_collapse,
    brute_ctc_loss,
    central_difference,
    labeling_log_marginals,
    rel_error,
)


def test_two_frame_uniform_example():
    lp = np.log(np.full((2, 2), 0.5))
    loss, _ = ctc_loss(lp, [0])
    assert loss == pytest.approx(-math.log(0.75), abs=1e-12)
    assert loss == pytest.approx(0.28768, abs=1e-5)


def test_repeat_needs_separator():
    lp = np.log(np.full((2, 2), 0.5))
    with pytest.raises(CTCInfeasibleError):
        ctc_loss(lp, [0, 0])
    assert min_frames([0, 0]) == 3
    assert min_frames([0, 1]) == 2
    assert min_frames([]) == 0


def test_extend_labels_layout():
    ext = extend_labels([4, 1], blank=9)
    assert ext.tolist() == [9, 4, 9, 1, 9]


def test_bad_labels_rejected():
    lp = log_softmax(np.zeros((4, 3)))
    with pytest.raises(ValueError):
        ctc_loss(lp, [2])  # blank used as a label
    with pytest.raises(ValueError):
        ctc_loss(lp, [5])


def test_empty_label_is_all_blank_path(rng):
    lp = log_softmax(rng.normal(size=(5, 3)))
    loss, _ = ctc_loss(lp, [])
    assert loss == pytest.approx(-lp[:, -1].sum(), abs=1e-12)


def test_matches_enumeration_random(rng):
    for _ in range(200):
        T = int(rng.integers(1, 6))
        V = int(rng.integers(1, 4))
        lp = log_softmax(rng.normal(size=(T, V + 1)) * 2)
        L = int(rng.integers(0, 4))
        lab = list(rng.integers(0, V, size=L))
        if min_frames(lab) > T:
            continue
        loss, _ = ctc_loss(lp, lab)
        assert abs(loss - brute_ctc_loss(lp, lab)) <= 1e-9


def test_marginals_sum_to_one(rng):
    lp = log_softmax(rng.normal(size=(4, 3)))
    total = sum(math.exp(-ctc_loss(lp, list(lab))[0])
                for lab in labeling_log_marginals(lp))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_gradient_matches_finite_differences(rng):
    for T, V, lab in [(5, 3, [0, 1]), (6, 2, [1, 1]), (4, 4, [2]), (3, 2, [])]:
        logits = rng.normal(size=(T, V + 1))
        _, grad = ctc_loss(log_softmax(logits), lab)
        num = central_difference(lambda: ctc_loss(log_softmax(logits), lab)[0], logits, 1e-5)
        assert rel_error(grad, num) <= 1e-6


def test_gradient_rows_sum_to_zero(rng):
    _, grad = ctc_loss(log_softmax(rng.normal(size=(7, 4))), [0, 2, 1])
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


def test_shift_invariance(rng):
    logits = rng.normal(size=(6, 4))
    shifted = logits + rng.normal(size=(6, 1)) * 10
    a = ctc_loss(log_softmax(logits), [1, 2])
    b = ctc_loss(log_softmax(shifted), [1, 2])
    assert a[0] == pytest.approx(b[0], abs=1e-10)
    np.testing.assert_allclose(a[1], b[1], atol=1e-10)


def test_greedy_examples():
    def onehot(path, k=3):
        m = np.full((len(path), k), -10.0)
        m[np.arange(len(path)), path] = 0.0
        return m
    assert greedy_decode(onehot([2, 2, 2])).ids == ()
    assert list(greedy_decode(onehot([0, 0, 2, 0, 1])).ids) == [0, 0, 1]
    assert greedy_decode(onehot([1, 1, 1])).score == pytest.approx(0.0)


def test_greedy_tie_goes_to_lowest_index():
    lp = np.log(np.full((1, 3), 1 / 3))
    assert list(greedy_decode(lp).ids) == [0]


def test_greedy_matches_oracle(rng):
    for _ in range(300):
        T, K = int(rng.integers(1, 12)), int(rng.integers(2, 6))
        lp = log_softmax(rng.normal(size=(T, K)))
        res = greedy_decode(lp)
        assert tuple(res.ids) == argmax_collapse(lp)
        assert res.score == pytest.approx(lp.max(axis=1).sum(), abs=1e-12)


def test_beam_exhaustive_equals_enumeration(rng):
    for T in range(1, 5):
        for _ in range(10):
            lp = log_softmax(rng.normal(size=(T, 3)) * 2)
            marg = labeling_log_marginals(lp)
            best = max(marg.values())
            res = beam_decode(lp, beam_width=None)
            assert res.score == pytest.approx(best, abs=1e-9)
            assert marg[tuple(res.ids)] == pytest.approx(best, abs=1e-9)


def test_beam_single_frame():
    lp = np.log(np.array([[0.2, 0.5, 0.3]]))
    res = beam_decode(lp, beam_width=1)
    assert list(res.ids) == [1]
    assert res.score == pytest.approx(math.log(0.5))


def test_beam_score_monotone_in_width(rng):
    for _ in range(30):
        lp = log_softmax(rng.normal(size=(int(rng.integers(2, 10)), 4)))
        scores = [beam_decode(lp, beam_width=w).score for w in (1, 2, 4, 8, 16)]
        assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_beam_score_at_least_greedy_path_marginal(rng):
    for _ in range(30):
        lp = log_softmax(rng.normal(size=(6, 3)))
        greedy = greedy_decode(lp)
        assert beam_decode(lp, 8).score >= greedy.score - 1e-12


def test_neg_inf_constant():
    assert NEG_INF == -np.inf


def test_all_labelings_enumerated_for_small_grid():
    lp = log_softmax(np.zeros((3, 2)))
    labs = set(labeling_log_marginals(lp))
    expected = {()} | {tuple([0] * n) for n in (1, 2)}
    assert labs == expected
    for lab in labs:
        assert ctc_loss(lp, list(lab))[0] == pytest.approx(brute_ctc_loss(lp, lab), abs=1e-12)
