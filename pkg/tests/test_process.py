import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom, chisquare

from dynbits import process as P
from dynbits.errors import DomainError
from dynbits.streams import stream
from dynbits.timeset import TimeSet

import oracles


def test_transition_params_examples():
    tp = P.transition_params(0.5, 0.0)
    assert (tp.theta, tp.kappa) == (0.0, 1.0)
    tp = P.transition_params(0.5, math.log(2))
    assert tp.theta == pytest.approx(0.25, abs=1e-15)
    assert tp.kappa == pytest.approx(0.75, abs=1e-15)
    tp = P.transition_params(0.9, 50.0)
    assert abs(tp.theta - 0.9) < 1e-15 and abs(tp.kappa - 0.9) < 1e-15


@pytest.mark.parametrize("p,t", [(0.0, 1.0), (1.0, 1.0), (0.5, -0.1), (1.5, 0.0)])
def test_transition_params_domain(p, t):
    with pytest.raises(DomainError):
        P.transition_params(p, t)
    with pytest.raises(ValueError):
        P.transition_params(p, t)


@given(p=st.floats(0.01, 0.99), t=st.floats(0, 20))
def test_transition_params_invariants(p, t):
    tp = P.transition_params(p, t)
    assert 0 <= tp.theta <= p + 1e-15 <= tp.kappa + 2e-15 <= 1 + 3e-15
    assert tp.theta + (1 - tp.kappa) == pytest.approx(1 - math.exp(-t), abs=1e-14)


def test_transition_matrix_examples():
    np.testing.assert_allclose(P.transition_matrix(0.5, math.log(2)), [[0.75, 0.25], [0.25, 0.75]],
                               atol=1e-15)
    np.testing.assert_array_equal(P.transition_matrix(0.3, 0.0), np.eye(2))
    np.testing.assert_allclose(P.transition_matrix(0.3, 0.3) @ P.transition_matrix(0.3, 0.4),
                               P.transition_matrix(0.3, 0.7), atol=1e-12)


@given(p=st.floats(0.01, 0.99), s=st.floats(0, 5), t=st.floats(0, 5))
def test_semigroup(p, s, t):
    M = P.transition_matrix(p, s) @ P.transition_matrix(p, t)
    np.testing.assert_allclose(M, P.transition_matrix(p, s + t), atol=1e-12)
    np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-14)


def test_transition_matrix_matches_hand_oracle():
    np.testing.assert_allclose(P.transition_matrix(0.37, 0.81), oracles.bit_kernel(0.81, 0.37), atol=1e-15)


def test_conditional_return_examples():
    assert P.conditional_return_prob(2, 1, math.log(2), 0.5) == pytest.approx(0.625, abs=1e-14)
    assert P.conditional_return_prob(7, 3, 0.0, 0.4) == 1.0
    # labelled-state chain over all 2^6 bit vectors
    law = oracles.sum_law_after(6, 3, 0.7, 0.5)
    assert P.conditional_return_prob(6, 3, 0.7, 0.5) == pytest.approx(law[3], abs=1e-12)


@pytest.mark.parametrize("k,ell", [(3, -1), (3, 4), (0, 0), (3, 1.5)])
def test_conditional_return_domain(k, ell):
    with pytest.raises(DomainError):
        P.conditional_return_prob(k, ell, 0.1, 0.5)


def test_conditional_return_large_k_finite():
    v = P.conditional_return_prob(10_000, 5000, 0.01, 0.5)
    assert 0 < v < 1 and math.isfinite(v)


def test_sum_kernel_examples():
    tp = P.transition_params(0.3, 0.6)
    d = P.sum_transition_kernel(1, 1, 0.6, 0.3)
    np.testing.assert_allclose(d.probs, [1 - tp.kappa, tp.kappa], atol=1e-15)
    np.testing.assert_allclose(P.sum_transition_kernel(3, 2, 0.0, 0.4).probs, [0, 0, 1, 0], atol=0)
    d = P.sum_transition_kernel(4, 4, 50.0, 0.5)
    # stationary law by enumerating the 16 bit states
    states = np.array([[(x >> i) & 1 for i in range(4)] for x in range(16)])
    assert d[2] == pytest.approx(np.mean(states.sum(axis=1) == 2), abs=1e-10)
    assert d[2] == pytest.approx(0.375, abs=1e-10)
    with pytest.raises(DomainError):
        P.sum_transition_kernel(3, 4, 0.1, 0.5)


@pytest.mark.parametrize("p", [0.3, 0.5, 0.9])
def test_stationarity(p):
    for k in range(1, 13):
        pi = binom.pmf(np.arange(k + 1), k, p)
        for t in (0.05, 0.7, 3.0):
            np.testing.assert_allclose(pi @ P.kernel_matrix(k, t, p), pi, atol=1e-12)


@given(k=st.integers(1, 12), data=st.data(), t=st.floats(0, 4), p=st.floats(0.05, 0.95))
@settings(max_examples=60)
def test_return_prob_consistency(k, data, t, p):
    ell = data.draw(st.integers(0, k))
    d = P.sum_transition_kernel(k, k - ell, t, p)
    assert P.conditional_return_prob(k, ell, t, p) == pytest.approx(d[k - ell], abs=1e-12)
    np.testing.assert_allclose(d.probs, oracles.sum_law_convolution(k, k - ell, t, p), atol=1e-12)


def test_kernel_subnormal_time():
    t = 2.2250738585072014e-308
    d = P.sum_transition_kernel(2, 0, t, 0.5)
    assert np.all(np.isfinite(d.probs)) and d[0] == pytest.approx(1.0)
    assert P.conditional_return_prob(2, 2, t, 0.5) == pytest.approx(1.0)


def test_kernel_matches_generator_exponential():
    from scipy.linalg import expm
    np.testing.assert_allclose(expm(0.37 * P.sum_generator(7, 0.3)), P.kernel_matrix(7, 0.37, 0.3),
                               atol=1e-12)


def test_simulate_domain_and_determinism():
    with pytest.raises(DomainError):
        P.simulate_trajectory(1, 1.0, 1.0, 0)
    with pytest.raises(DomainError):
        P.simulate_trajectory(3, 0.5, 0.0, 0)
    a = P.simulate_trajectory(2, 0.5, 1.0, 17)
    b = P.simulate_trajectory(2, 0.5, 1.0, 17)
    assert a == b
    assert P.Trajectory.from_json(a.to_json()) == a


def test_trajectory_invariants():
    tr = P.simulate_trajectory(50, 0.3, 2.0, 5)
    assert np.all(np.diff(tr.times) > 0)
    assert np.all((tr.times > 0) & (tr.times <= 2.0))
    assert np.all((tr.indices >= 0) & (tr.indices < 50))
    assert tr.sums()[-1] == tr.final_bits().sum()
    # right-continuity: the sum at an event time already includes the event
    assert tr.sum_at(tr.times[3]) == tr.sums()[3]


def test_event_count_mean():
    counts = np.array([P.simulate_trajectory(100, 0.5, 1.0, s).times.size for s in range(10_000)])
    assert abs(counts.mean() - 100) <= 3 * math.sqrt(100 / counts.size)


def _fixed(initial, times, indices, values, horizon=1.0):
    return P.Trajectory(len(initial), 0.5, horizon, np.array(initial, dtype=np.uint8),
                        np.array(times, float), np.array(indices, dtype=np.int64),
                        np.array(values, dtype=np.uint8), 0)


def test_hits_level_examples():
    tr = _fixed([1, 0], [], [], [])
    assert P.hits_level(tr, 1, TimeSet.points([0.7]))
    # sum is 2 only on [0.2, 0.3)
    tr = _fixed([1, 0], [0.2, 0.3], [1, 0], [1, 0])
    assert not P.hits_level(tr, 2, TimeSet.intervals([[0.5, 0.9]]))
    assert P.hits_level(tr, 2, TimeSet.intervals([[0.25, 0.9]]))
    assert not P.hits_level(tr, 2, TimeSet.points([0.3]))
    with pytest.raises(DomainError):
        P.hits_level(tr, 2, TimeSet.points([1.5]))


def test_hits_level_pointwise_oracle():
    rng = np.random.default_rng(0)
    for seed in range(1000):
        pts = np.sort(rng.uniform(0, 1, 4))
        tr = P.simulate_trajectory(6, 0.5, 1.0, seed)
        level = int(rng.integers(0, 7))
        assert P.hits_level(tr, level, TimeSet.points(pts)) == bool(np.any(tr.sum_at(pts) == level))


def test_mc_marginal_chi_square():
    k, t, p, n = 8, 0.4, 0.35, 100_000
    rng = stream(123)
    _, init = P.simulate_batch(k, p, 0.0, n, rng)
    # condition on each sampled initial sum through the kernel
    expected = np.bincount(init, minlength=k + 1) @ P.kernel_matrix(k, t, p)
    _, final = P.simulate_batch(k, p, t, n, stream(123))
    observed = np.bincount(final, minlength=k + 1)
    keep = expected > 5
    obs, exp = observed[keep], expected[keep]
    assert chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 1e-3


def test_batch_initial_sum_return():
    k, ell, t, p = 10, 4, 0.3, 0.6
    _, final = P.simulate_batch(k, p, t, 100_000, stream(9), initial_sum=k - ell)
    p_hat = np.mean(final == k - ell)
    exact = P.conditional_return_prob(k, ell, t, p)
    assert abs(p_hat - exact) <= 3 * math.sqrt(exact * (1 - exact) / 100_000)
