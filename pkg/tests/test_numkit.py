import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctcot.numkit import RandStream, as_matrix, log_softmax, logsumexp, softmax

finite = st.floats(-50, 50, allow_nan=False)


def test_logsumexp_known_values():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)
    assert logsumexp([-np.inf, 0.0]) == 0.0
    assert logsumexp([-np.inf, -np.inf]) == -np.inf


def test_logsumexp_empty_raises():
    with pytest.raises(ValueError):
        logsumexp([])


@given(st.lists(finite, min_size=1, max_size=20))
def test_logsumexp_bounds(xs):
    v = logsumexp(xs)
    assert max(xs) - 1e-12 <= v <= max(xs) + math.log(len(xs)) + 1e-12


@given(st.lists(finite, min_size=1, max_size=20), finite)
def test_logsumexp_shift_equivariant(xs, c):
    assert logsumexp(np.array(xs) + c) == pytest.approx(logsumexp(xs) + c, abs=1e-9)


def test_logsumexp_axis_matches_flat(rng):
    M = rng.normal(size=(4, 5)) * 30
    rows = logsumexp(M, axis=1)
    for i in range(4):
        assert rows[i] == pytest.approx(logsumexp(M[i]), abs=1e-12)


@given(st.lists(finite, min_size=1, max_size=10))
def test_softmax_is_distribution(xs):
    p = softmax(xs)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= 0)
    assert np.allclose(np.exp(log_softmax(xs)), p, atol=1e-12)


def test_streams_are_independent_and_repeatable():
    rs = RandStream(7)
    a = rs.stream(1).normal(size=5)
    rs.stream(2).normal(size=100)
    assert np.array_equal(a, RandStream(7).stream(1).normal(size=5))
    assert not np.array_equal(a, rs.stream(3).normal(size=5))
    assert not np.array_equal(a, RandStream(8).stream(1).normal(size=5))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        RandStream(-1)


def test_as_matrix_validation():
    with pytest.raises(ValueError):
        as_matrix([1.0, 2.0])
    with pytest.raises(ValueError):
        as_matrix([[np.nan]])
    assert as_matrix([[1, 2]]).dtype == np.float64
