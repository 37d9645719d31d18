import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctcot.ctc import (
    BLANK,
    CtcInfeasible,
    collapse,
    collapsed_distribution,
    corpus_wer,
    ctc_brute_force,
    ctc_loss,
    edit_distance,
    greedy_decode,
    min_frames,
    wer,
)
from ctcot.numkit import log_softmax


def random_lp(rng, S, K):
    return log_softmax(rng.normal(size=(S, K)) * 2, axis=1)


def test_collapse_examples():
    assert collapse([1, 1, 0, 1, 2, 2, 0]) == [1, 1, 2]
    assert collapse([0, 0, 0]) == []
    assert collapse([]) == []


def test_min_frames_counts_repeats():
    assert min_frames([1, 2, 3]) == 3
    assert min_frames([1, 1, 2, 2]) == 6
    assert min_frames([]) == 0


def test_uniform_two_frames_single_token():
    # paths 01, 10, 11 out of four equally likely -> p = 3/4
    lp = np.log(np.full((2, 2), 0.5))
    assert ctc_loss(lp, [1]).loss == pytest.approx(-math.log(0.75), abs=1e-14)


def test_empty_target_is_all_blank_path(rng):
    lp = random_lp(rng, 4, 3)
    assert ctc_loss(lp, []).loss == pytest.approx(-lp[:, BLANK].sum(), abs=1e-12)


def test_infeasible_target_raises(rng):
    lp = random_lp(rng, 3, 3)
    with pytest.raises(CtcInfeasible):
        ctc_loss(lp, [1, 1, 2])
    assert ctc_brute_force(lp, [1, 1, 2]) == math.inf


def test_invalid_tokens_rejected(rng):
    lp = random_lp(rng, 3, 3)
    with pytest.raises(ValueError):
        ctc_loss(lp, [0])
    with pytest.raises(ValueError):
        ctc_loss(lp, [3])


@given(st.integers(0, 10_000))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    S = int(rng.integers(1, 6))
    K = int(rng.integers(2, 4))
    T = int(rng.integers(0, S + 1))
    target = list(rng.integers(1, K, size=T))
    lp = random_lp(rng, S, K)
    if min_frames(target) > S:
        return
    assert ctc_loss(lp, target).loss == pytest.approx(ctc_brute_force(lp, target), abs=1e-9)


def test_collapsed_distribution_sums_to_one(rng):
    lp = random_lp(rng, 5, 3)
    assert sum(collapsed_distribution(lp).values()) == pytest.approx(1.0, abs=1e-12)


def test_gradient_rows_sum_to_zero_and_match_fd(rng):
    z = rng.normal(size=(6, 4))
    target = [1, 2, 2]
    g = ctc_loss(log_softmax(z, axis=1), target).grad
    assert np.allclose(g.sum(axis=1), 0.0, atol=1e-12)
    h = 1e-6
    for idx in [(0, 0), (2, 1), (5, 3), (3, 2)]:
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        fd = (ctc_loss(log_softmax(zp, axis=1), target).loss - ctc_loss(log_softmax(zm, axis=1), target).loss) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_loss_nonnegative(rng):
    for _ in range(20):
        lp = random_lp(rng, 4, 3)
        assert ctc_loss(lp, [1]).loss >= 0


def test_greedy_decode_ties_and_collapse():
    lp = np.log(np.array([[0.5, 0.5, 0.0 + 1e-300], [0.1, 0.9, 1e-300], [0.1, 0.9, 1e-300], [0.2, 0.1, 0.7]]))
    # first row ties blank vs token 1 -> blank wins (lowest index)
    assert greedy_decode(lp) == [1, 2]


def test_edit_distance_and_wer():
    assert edit_distance([1, 2, 3], [1, 3]) == 1
    assert edit_distance([], [1, 2]) == 2
    assert wer([1, 2, 3, 4], []) == 1.0
    assert wer([1, 2], [1, 2]) == 0.0
    assert corpus_wer([([1, 2], [1]), ([3, 4], [3, 4])]) == 0.25
    with pytest.raises(ValueError):
        wer([], [1])


@given(st.lists(st.integers(1, 4), max_size=8), st.lists(st.integers(1, 4), max_size=8))
def test_edit_distance_symmetric_and_bounded(a, b):
    d = edit_distance(a, b)
    assert d == edit_distance(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
