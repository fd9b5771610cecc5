import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare, kstest

from dynbits import energy
from dynbits import parity as Q
from dynbits.errors import BudgetExceededError, DomainError

import oracles

# m(0) = 1, m(1) = 2, doubling afterwards
DOUBLING = Q.BlockScheme.table([2**k for k in range(30)])
# ratios stay above 1/(1 - ln 2) so 2^-t m(t) increases along each segment
STEEP_TABLE = Q.BlockScheme.table([4**k + 3**k for k in range(24)])
MQ_HALF = Q.BlockScheme.mq(0.5, continuous=True)


def test_single_factor_examples():
    assert Q.f_n(DOUBLING, 1, 0.0) == 0.0
    assert Q.f_n(DOUBLING, 1, math.log(2)) == pytest.approx(0.75, abs=1e-15)
    assert Q.riesz_product(DOUBLING, 1, math.log(2)) == pytest.approx(1.25, abs=1e-15)
    assert Q.riesz_product(DOUBLING, None, 60.0) == pytest.approx(1.0, abs=1e-15)


def test_products_monotone():
    lam = np.geomspace(1e-4, 10, 60)
    f = [Q.f_n(STEEP_TABLE, None, x) for x in lam]
    r = [Q.riesz_product(STEEP_TABLE, None, x) for x in lam]
    assert np.all(np.diff(f) >= 0) and np.all(np.diff(r) <= 0)
    assert all(0 <= v <= 1 for v in f) and all(v >= 1 for v in r)


def test_finite_product_matches_direct():
    lam = 0.013
    direct = np.prod([1 + math.exp(-(2**k) * lam) for k in range(1, 11)])
    assert Q.riesz_product(DOUBLING, 10, lam) == pytest.approx(direct, rel=1e-14)


@pytest.mark.parametrize("q", [0.3, 0.5, 0.7])
def test_laplace_continuous_mq_analytic(q):
    s = Q.BlockScheme.mq(q, continuous=True)
    for lam in (1e-4, 1e-2, 0.3, 1.0, 5.0):
        assert Q.laplace_g(s, lam) == pytest.approx(oracles.continuous_mq_laplace(q, lam), rel=1e-6)
    assert Q.laplace_g(MQ_HALF, 1.0) == pytest.approx(math.gamma(1.5), abs=1e-6)


def test_laplace_table_closed_form():
    for lam in (1e-5, 1e-3, 0.05, 0.7, 3.0):
        assert Q.laplace_g(STEEP_TABLE, lam) == pytest.approx(
            oracles.table_laplace_closed_form(STEEP_TABLE.values, lam), rel=1e-7)


def test_laplace_decreasing_and_domain():
    vals = [Q.laplace_g(STEEP_TABLE, x) for x in np.geomspace(1e-3, 50, 20)]
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-10
    with pytest.raises(DomainError):
        Q.laplace_g(STEEP_TABLE, 0.0)


def test_scheme_validation_and_flags():
    with pytest.raises(DomainError):
        Q.BlockScheme.table([1, 1, 2])
    with pytest.raises(DomainError):
        Q.BlockScheme.mq(0.0)
    with pytest.raises(DomainError):
        Q.BlockScheme.from_spec({"type": "poly"})
    # floor(2^(k/q)) repeats values when q > 1
    with pytest.raises(DomainError):
        Q.BlockScheme.mq(1.5)
    assert STEEP_TABLE.flags["two_pow_increasing"]
    assert MQ_HALF.flags["two_pow_increasing"]
    for s in (STEEP_TABLE, MQ_HALF, Q.BlockScheme.mq(0.3, continuous=True)):
        if s.flags["two_pow_increasing"]:
            assert s.flags["min_ratio"] >= 2
    # a table whose ratios dip below 1/(1 - ln 2) fails the flag
    assert not Q.BlockScheme.table([int(3.5**k) + k for k in range(20)]).flags["two_pow_increasing"]
    s = Q.BlockScheme.from_spec(STEEP_TABLE.to_spec())
    assert s.values == STEEP_TABLE.values


def test_inverse_and_g():
    for s in (STEEP_TABLE, DOUBLING, MQ_HALF, Q.BlockScheme.mq(0.5)):
        for x in (0.0, 0.5, 3.25, 7.0, 26.5):
            assert s.m_inv(float(s.m(x))) == pytest.approx(x, abs=1e-9)
            assert s.g(float(s.m(x))) == pytest.approx(2.0**x, rel=1e-9)
    np.testing.assert_array_equal(DOUBLING.block_sizes(5), [2, 4, 8, 16, 32])


def test_energy_two_atoms():
    D = 0.05
    mu = energy.DiscreteMeasure.uniform([0.2, 0.2 + D])
    e = Q.energy_I_J(STEEP_TABLE, mu)
    assert e.I_off == pytest.approx(0.5 * Q.riesz_product(STEEP_TABLE, None, D), rel=1e-12)
    assert e.J_off == pytest.approx(0.5 * Q.laplace_g(STEEP_TABLE, D), rel=1e-12)
    assert e.offdiag_mass == pytest.approx(0.5) and e.diag_mass == pytest.approx(0.5)
    assert e.diagonal_flag and not e.coincident
    e = Q.energy_I_J(STEEP_TABLE, energy.DiscreteMeasure([0.1, 0.1, 0.3], [0.2, 0.3, 0.5]))
    assert e.coincident


@pytest.mark.parametrize("q", [0.3, 0.5])
def test_J_is_riesz_energy_for_continuous_mq(q):
    x = np.linspace(0, 1, 40)
    mu = energy.DiscreteMeasure.uniform(x)
    e = Q.energy_I_J(Q.BlockScheme.mq(q, continuous=True), mu)
    d = np.abs(x[:, None] - x[None, :])
    off = ~np.eye(x.size, dtype=bool)
    riesz = math.gamma(q + 1) * np.sum(d[off] ** -q) / x.size**2
    assert e.J_off == pytest.approx(riesz, rel=1e-4)


@given(lam=st.floats(1e-4, 1.0))
@settings(max_examples=30, deadline=None)
def test_kernel_sandwich_pointwise(lam):
    for s in (STEEP_TABLE, MQ_HALF):
        C = Q.sandwich_constant(s, 1.0)
        up = 1 + Q.laplace_g(s, lam)
        I = Q.riesz_product(s, None, lam)
        assert up / (4 * (1 + C)) <= I <= up


def test_kernel_curves_table():
    table, C = Q.kernel_curves(STEEP_TABLE, np.geomspace(1e-3, 1, 5), 1.0)
    assert table.shape == (5, 4) and C > 0
    assert np.all(table[:, 1] <= table[:, 2]) and np.all(table[:, 1] >= table[:, 3])


def test_tm_one_block_exact():
    s = Q.BlockScheme.table([2**k for k in range(10)])
    exact = Q.hit_all_zero_exact_one_block(s)
    # grid taboo values increase to the continuous-time value
    grid = [oracles.two_state_parity_hit(s.block_sizes(1)[0] / 2, n) for n in (64, 1024, 16384)]
    assert grid[0] <= grid[1] <= grid[2] <= exact and exact - grid[2] < 1e-4
    est = Q.simulate_T_m(s, 1, 40_000, 3)
    sigma = math.sqrt(exact * (1 - exact) / est.trials)
    assert abs(est.estimates[0] - exact) <= 3 * sigma


def test_tm_monotone_threads_budget():
    s = Q.BlockScheme.table([2**k for k in range(30)])
    a = Q.simulate_T_m(s, 8, 5000, 11, threads=1)
    b = Q.simulate_T_m(s, 8, 5000, 11, threads=2)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert np.all(np.diff(a.counts) <= 0)
    assert np.all(a.stderr >= 0)
    with pytest.raises(BudgetExceededError):
        Q.simulate_T_m(s, 25, 10, 1)
    with pytest.raises(DomainError):
        Q.simulate_T_m(s, 0, 10, 1)


def test_parity_marginals_independent():
    s = Q.BlockScheme.table([2**k for k in range(12)])
    states = np.array([Q.simulate_parity_trajectory(s, 3, seed).state_at(0.37) for seed in range(4000)])
    cells = states @ np.array([1, 2, 4])
    assert chisquare(np.bincount(cells, minlength=8)).pvalue > 1e-3


def test_parity_flip_times_exponential():
    s = Q.BlockScheme.table([2**k for k in range(12)])
    sizes = s.block_sizes(3)
    for j, b in enumerate(sizes):
        gaps = []
        # a long horizon keeps the censoring of the last gap negligible
        for seed in range(40):
            f = np.asarray(Q.simulate_parity_trajectory(s, 3, seed, horizon=100.0).flips[j])
            if f.size:
                gaps.extend(np.diff(np.r_[0.0, f]).tolist())
        # the first gap is measured from 0, which is also Exponential by memorylessness
        assert kstest(gaps, "expon", args=(0, 2.0 / b)).pvalue > 1e-3
