import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from dynbits import estimators as E
from dynbits.errors import DomainError
from dynbits.process import conditional_return_prob
from dynbits.timeset import TimeSet

import oracles


def test_exact_finite_examples():
    assert E.exact_hit_prob_finite(4, 2, 0.5, [0.0]) == pytest.approx(0.375, abs=1e-15)
    assert E.exact_hit_prob_finite(1, 1, 0.5, [0.0, math.log(2)]) == pytest.approx(0.625, abs=1e-15)
    times = [0.0, 0.4, 1.1]
    assert E.exact_hit_prob_finite(3, 2, 0.5, times) == pytest.approx(
        oracles.brute_force_hit_prob(3, 2, 0.5, times), abs=1e-12)


@pytest.mark.parametrize("args", [
    (201, 3, 0.5, [0.0]), (5, 6, 0.5, [0.0]), (5, 2, 0.5, []), (5, 2, 0.5, list(range(65))),
    (5, 2, 0.5, [-1.0]), (5, 2, 1.0, [0.0]),
])
def test_exact_finite_domain(args):
    with pytest.raises(DomainError):
        E.exact_hit_prob_finite(*args)


@given(data=st.data(), k=st.integers(1, 5), p=st.sampled_from([0.3, 0.5, 0.8]),
       times=st.lists(st.floats(0, 2), min_size=1, max_size=3))
@settings(max_examples=40, deadline=None)
def test_exact_finite_vs_brute_force(data, k, p, times):
    level = data.draw(st.integers(0, k))
    assert E.exact_hit_prob_finite(k, level, p, times) == pytest.approx(
        oracles.brute_force_hit_prob(k, level, p, times), abs=1e-12)


def test_exact_monotone_in_times():
    rng = np.random.default_rng(2)
    for _ in range(20):
        t = np.sort(rng.uniform(0, 1, 10))
        k, level = 20, int(rng.integers(0, 21))
        vals = [E.exact_hit_prob_finite(k, level, 0.6, t[:j]) for j in range(1, 11)]
        assert np.all(np.diff(vals) >= -1e-14)


def test_interval_exact_matches_dp_on_points_and_bracket():
    F = TimeSet.points([0.0, 0.3, 0.9])
    assert E.exact_hit_prob(8, 7, 0.6, F) == pytest.approx(
        E.exact_hit_prob_finite(8, 7, 0.6, [0, 0.3, 0.9]), abs=1e-13)
    F = TimeSet.intervals([[0, 1]])
    exact = E.exact_hit_prob(4, 4, 0.5, F)
    br = E.grid_bracket(4, 4, 0.5, F)
    assert br.coarse <= br.fine <= exact
    lo, hi = br.interval
    assert lo <= exact <= hi
    F = TimeSet.cantor(depth=4)
    exact = E.exact_hit_prob(12, 10, 0.7, F)
    br = E.grid_bracket(12, 10, 0.7, F)
    assert br.fine <= exact + 1e-13


def test_exact_interval_oracle_single_bit():
    # one bit at level 1 on [0, T]: miss only if it starts at 0 and no tick turns it on
    p, T = 0.3, 0.8
    want = 1 - (1 - p) * math.exp(-p * T)
    assert E.exact_hit_prob(1, 1, p, TimeSet.intervals([[0, T]])) == pytest.approx(want, abs=1e-13)


def test_mc_examples():
    F = TimeSet.points([0.0])
    est = E.mc_hit_prob(10, 2, 0.5, F, 100_000, 1)
    exact = binom.pmf(8, 10, 0.5)
    assert abs(est.p_hat - exact) <= 3 * est.sigma
    assert est.ci95[0] <= est.p_hat <= est.ci95[1]
    F = TimeSet.points([0.0, 0.3, 0.9])
    est = E.mc_hit_prob(8, 1, 0.6, F, 100_000, 2)
    exact = E.exact_hit_prob_finite(8, 7, 0.6, [0, 0.3, 0.9])
    assert abs(est.p_hat - exact) <= 3 * est.sigma
    F = TimeSet.intervals([[0, 1]])
    est = E.mc_hit_prob(4, 0, 0.5, F, 100_000, 3)
    lo, hi = E.grid_bracket(4, 4, 0.5, F).interval
    assert lo - 3 * est.sigma <= est.p_hat <= hi + 3 * est.sigma


def test_mc_thread_independence():
    F = TimeSet.cantor(depth=5)
    a = E.mc_hit_prob(12, 2, 0.7, F, 20_000, 99, threads=1)
    b = E.mc_hit_prob(12, 2, 0.7, F, 20_000, 99, threads=3)
    assert a.hits == b.hits


def test_mc_domain():
    with pytest.raises(DomainError):
        E.mc_hit_prob(4, 5, 0.5, TimeSet.points([0]), 10, 0)
    with pytest.raises(DomainError):
        E.mc_hit_prob(4, 1, 0.5, TimeSet.points([0]), 0, 0)


def test_wilson_interval_edge():
    est = E.HitProbEstimate(3, 0, 0.5, TimeSet.points([0]), 100, 0, 0)
    assert est.ci95[0] == 0.0 and 0 < est.ci95[1] < 0.05
    with pytest.raises(DomainError):
        E.HitProbEstimate(3, 0, 0.5, TimeSet.points([0]), 10, 11, 0)


def test_thm1_point_ratio_analytic():
    # F = {0}: ratio C(k, ell) (q/p)^ell / k^ell, tending to (q/p)^ell / ell!
    rep = E.verify_thm1(TimeSet.points([0.0]), 0.9, 2, [20, 40, 60], 200_000, 5)
    want = np.array([binom.pmf(k - 2, k, 0.9) / (k**2 * 0.9**k) for k in (20, 40, 60)])
    np.testing.assert_allclose(want, [math.comb(k, 2) * (0.1 / 0.9) ** 2 / k**2 for k in (20, 40, 60)])
    assert np.all(np.abs(rep.ratios - want) <= 4 * (rep.ratio_ci[:, 1] - rep.ratio_ci[:, 0]) / 2)
    assert rep.spread < 2


def test_thm1_warns_on_few_hits():
    with pytest.warns(RuntimeWarning):
        rep = E.verify_thm1(TimeSet.points([0.0]), 0.5, 0, [30], 100, 1)
    assert rep.warnings


def test_return_asymptotics_examples():
    assert E.return_bound(100, 0.0) == 1.0
    rep = E.verify_return_asymptotics([2], t_grid=[0.0, 0.3])
    assert rep.ratios[0][0] == 1.0
    th = -0.5 * math.expm1(-0.3)
    ka = 0.5 + 0.5 * math.exp(-0.3)
    assert rep.ratios[0][1] * E.return_bound(2, 0.3) == pytest.approx((1 - th) * ka + th * (1 - ka))
    rep = E.verify_return_asymptotics([4096], t_grid=[1 / 4096, 10 / 4096, 0.1, 1.0])
    assert 0.05 <= rep.band[0] and rep.band[1] <= 20
    with pytest.raises(DomainError):
        E.verify_return_asymptotics([5])


def test_thm3_point_ratio():
    # F = {0}: P(S_k = k/2) against the local limit; energy is 1
    rep = E.verify_thm3(TimeSet.points([0.0]), [64, 256, 1024], 20_000, 8)
    np.testing.assert_allclose(rep.extra["energies"], 1.0)
    exact = np.array([binom.pmf(k // 2, k, 0.5) for k in (64, 256, 1024)])
    assert np.all(np.abs(rep.ratios / np.sqrt([64, 256, 1024]) - exact) <= 4 * np.array(
        [e.sigma for e in rep.estimates]) + 1e-12)
    assert abs(rep.slope + 0.5) < 0.1


def test_correlation_brackets_exact():
    rep = E.verify_correlation_length(0.9, [0, 1], [10, 30])
    for i, ell in enumerate([0, 1]):
        for j, k in enumerate([10, 30]):
            exact = E.exact_hit_prob(k, k - ell, 0.9, TimeSet.intervals([[0, 1 / k]])) / (k**ell * 0.9**k)
            assert rep.lower[i, j] <= exact * (1 + 1e-12)
            assert exact <= rep.upper[i, j] * (1 + 1e-9)


def test_report_serialization():
    rep = E.verify_thm1(TimeSet.points([0.0, 0.5]), 0.9, 1, [10, 12], 2000, 3)
    d = rep.to_dict()
    assert d["k_values"] == [10, 12] and len(d["estimates"]) == 2
    assert rep.ci_spread >= rep.spread


def test_return_large_k_stable():
    for k in (2**10, 2**12):
        v = conditional_return_prob(k, k // 2, 1.0 / k, 0.5)
        assert 0 < v <= 1
