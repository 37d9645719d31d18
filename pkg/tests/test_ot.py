import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctcot.ot import (
    OtConfig,
    augment_positions,
    exact_ot_bruteforce,
    exact_ot_cost,
    explicit_positional_cost,
    normalized_positions,
    pairwise_cost,
    sinkhorn,
    uniform,
    wasserstein_from_cost,
    wasserstein_loss,
)
from ctcot.synth import SynthConfig, generate, prototypes


def test_normalized_positions():
    assert np.allclose(normalized_positions(3), [0, 0.5, 1])
    assert np.allclose(normalized_positions(2), [0, 1])
    assert np.array_equal(normalized_positions(1), [0.0])
    with pytest.raises(ValueError):
        normalized_positions(0)


def test_augment_positions_direct():
    U = np.array([[7.0, 9.0]])
    assert np.array_equal(augment_positions(U, 2.0), [[7, 9], [0, 2]])
    assert np.array_equal(augment_positions(U, 0.0)[1], [0, 0])
    with pytest.raises(ValueError):
        augment_positions(U, -1.0)


def test_cost_examples():
    u = np.array([[0.0], [0.0]])
    v = np.array([[3.0], [4.0]])
    assert pairwise_cost(u, v, 2, 1.0)[0, 0] == pytest.approx(5.0)
    # u at s=0, v at t=1: put v second in a two-column cloud
    V = np.hstack([v, v])
    assert pairwise_cost(u, V, 2, 1.0)[0, 1] == pytest.approx(math.sqrt(26), abs=1e-12)


def test_cost_dimension_mismatch():
    with pytest.raises(ValueError):
        pairwise_cost(np.zeros((2, 3)), np.zeros((3, 3)))


@given(st.integers(0, 10_000), st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.sampled_from([0.0, 0.5, 1.0, 2.0]))
def test_augmented_cost_matches_explicit(seed, p, gamma):
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(3, int(rng.integers(1, 7))))
    V = rng.normal(size=(3, int(rng.integers(1, 7))))
    assert np.allclose(pairwise_cost(U, V, p, gamma), explicit_positional_cost(U, V, p, gamma), atol=1e-12, rtol=0)


def test_single_point_plan():
    r = sinkhorn([1.0], [1.0], np.array([[5.0]]))
    assert r.plan[0, 0] == pytest.approx(1.0)
    assert r.transport_cost == pytest.approx(5.0)


def test_two_by_two_closed_form():
    r = sinkhorn(uniform(2), uniform(2), np.array([[0.0, 1.0], [1.0, 0.0]]), lam=1.0, tol=1e-12)
    z11 = 1.0 / (2.0 * (1.0 + math.exp(-1.0)))
    assert r.plan[0, 0] == pytest.approx(z11, abs=1e-10)
    assert r.plan[1, 1] == pytest.approx(z11, abs=1e-10)
    assert r.plan[0, 1] == pytest.approx(0.5 - z11, abs=1e-10)
    assert r.transport_cost == pytest.approx(1.0 - 2.0 * z11, abs=1e-10)
    assert r.transport_cost == pytest.approx(0.26894, abs=1e-5)


def test_sinkhorn_rejects_bad_marginals():
    C = np.zeros((2, 2))
    with pytest.raises(ValueError):
        sinkhorn([0.6, 0.6], uniform(2), C)
    with pytest.raises(ValueError):
        sinkhorn([1.0, 0.0], uniform(2), C)
    with pytest.raises(ValueError):
        sinkhorn(uniform(2), uniform(2), np.array([[0, np.inf], [0, 0]]))


def test_non_convergence_is_flagged(rng):
    C = pairwise_cost(rng.normal(size=(2, 6)), rng.normal(size=(2, 6)))
    r = sinkhorn(uniform(6), uniform(6), C, lam=1e-3, tol=1e-14, max_iter=2)
    assert not r.converged


def test_exact_bruteforce_examples(rng):
    U = rng.normal(size=(3, 4))
    assert exact_ot_bruteforce(U, U) == 0.0
    assert exact_ot_cost(np.array([[0.0, 1.0], [1.0, 0.0]])) == 0.0
    assert exact_ot_cost(np.array([[1.0, 0.0], [0.0, 1.0]])) == 0.0
    with pytest.raises(ValueError):
        exact_ot_bruteforce(U, U[:, :3])
    with pytest.raises(ValueError):
        exact_ot_cost(np.zeros((9, 9)))


def _explicit_perm_min(C):
    n = C.shape[0]
    return min(sum(C[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))


def test_exact_cost_matches_loop(rng):
    C = rng.random((5, 5))
    assert exact_ot_cost(C) == pytest.approx(_explicit_perm_min(C), abs=1e-15)


@given(st.integers(0, 10_000))
def test_small_lambda_upper_bound(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    U, V = rng.normal(size=(2, n)), rng.normal(size=(2, n))
    C = pairwise_cost(U, V)
    r = sinkhorn(uniform(n), uniform(n), C, lam=1e-3, tol=1e-12)
    exact = exact_ot_cost(C)
    assert r.converged
    assert r.transport_cost >= exact - 1e-9
    assert r.transport_cost <= exact * 1.05 + 1e-3


@given(st.integers(0, 10_000), st.sampled_from([1e-2, 0.1, 1.0]))
def test_plan_marginals_and_monotone_violation(seed, lam):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 8)), int(rng.integers(1, 8))
    C = pairwise_cost(rng.normal(size=(3, m)), rng.normal(size=(3, n)))
    tol = 1e-10
    r = sinkhorn(uniform(m), uniform(n), C, lam=lam, tol=tol)
    assert np.all(r.plan >= 0)
    assert np.abs(r.plan.sum(1) - 1 / m).max() <= tol
    assert np.abs(r.plan.sum(0) - 1 / n).max() <= tol
    v = np.array(r.violations)
    # monotone up to floating-point noise in the violation itself
    assert np.all(np.diff(v) <= 1e-13)


def test_debiased_self_distance_is_zero(rng):
    for _ in range(50):
        U = rng.normal(size=(3, int(rng.integers(1, 8))))
        r = wasserstein_loss(U, U, OtConfig(debias=True))
        assert abs(r.value) <= 1e-8
        assert np.abs(r.grad_u).max() <= 1e-6


def test_augmented_loss_equals_explicit_cost_path(rng):
    cfg = OtConfig(gamma=1.0, debias=False)
    for _ in range(10):
        U, V = rng.normal(size=(3, 5)), rng.normal(size=(3, 4))
        via_features = wasserstein_loss(U, V, cfg).value
        via_matrix = wasserstein_from_cost(explicit_positional_cost(U, V, 2.0, 1.0), cfg)
        assert via_features == pytest.approx(via_matrix, abs=1e-12)


@given(st.integers(0, 10_000), st.booleans())
def test_gamma_zero_permutation_invariance(seed, debias):
    rng = np.random.default_rng(seed)
    U, V = rng.normal(size=(3, 5)), rng.normal(size=(3, 4))
    cfg = OtConfig(gamma=0.0, debias=debias, tol=1e-12)
    perm = rng.permutation(4)
    assert wasserstein_loss(U, V[:, perm], cfg).value == pytest.approx(wasserstein_loss(U, V, cfg).value, abs=1e-10)


def test_positional_prefers_identity_order():
    sc = SynthConfig(n_samples=100, n_eval=0, seed=3)
    protos = prototypes(sc)
    cfg = OtConfig(gamma=1.0)
    rng = np.random.default_rng(0)
    wins = 0
    for s in generate(sc):
        V = protos[:, s.transcript]
        perm = rng.permutation(V.shape[1])
        while np.array_equal(perm, np.arange(V.shape[1])):
            perm = rng.permutation(V.shape[1])
        wins += wasserstein_loss(s.frames, V, cfg).value <= wasserstein_loss(s.frames, V[:, perm], cfg).value
    assert wins >= 95


def test_loss_gradient_fd(rng):
    cfg = OtConfig(tol=1e-12, gamma=1.0)
    U, V = rng.normal(size=(2, 4)), rng.normal(size=(2, 3))
    r = wasserstein_loss(U, V, cfg)
    h = 1e-5
    for idx in np.ndindex(U.shape):
        Up, Um = U.copy(), U.copy()
        Up[idx] += h
        Um[idx] -= h
        fd = (wasserstein_loss(Up, V, cfg).value - wasserstein_loss(Um, V, cfg).value) / (2 * h)
        assert r.grad_u[idx] == pytest.approx(fd, rel=1e-3, abs=1e-8)


def test_coincident_points_have_finite_gradient():
    U = np.zeros((2, 2))
    r = wasserstein_loss(U, U.copy(), OtConfig(debias=False))
    assert np.all(np.isfinite(r.grad_u))


def test_config_round_trip_uses_lambda_key():
    cfg = OtConfig(lam=0.5, gamma=0.0)
    d = cfg.to_dict()
    assert "lambda" in d and "lam" not in d
    assert OtConfig.from_dict(d) == cfg
    with pytest.raises(ValueError):
        OtConfig(lam=0.0)
