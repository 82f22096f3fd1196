import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psdme.bands import dkw_radius
from psdme.bj import (
    _order_stat_bounds,
    bernoulli_kl,
    bj_band,
    bj_null_quantile,
    bj_null_statistics,
    bj_statistic,
    kl_invert,
    noncrossing_probability,
)
from psdme.data import TrueCdf, empirical_cdf


def kl_direct(a, b):
    out = 0.0
    if a > 0:
        out += a * math.log(a / b)
    if a < 1:
        out += (1 - a) * math.log((1 - a) / (1 - b))
    return out


def test_bernoulli_kl_examples():
    assert bernoulli_kl(0.2, 0.5) == pytest.approx(0.192745, abs=1e-6)
    assert bernoulli_kl(0.3, 0.3) == 0.0
    assert bernoulli_kl(0.0, 0.5) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        bernoulli_kl(0.5, 1.0)
    with pytest.raises(ValueError):
        bernoulli_kl(1.5, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(1e-6, 1 - 1e-6))
def test_bernoulli_kl_nonnegative_and_direct(a, b):
    v = bernoulli_kl(a, b)
    assert v >= 0
    assert v == pytest.approx(kl_direct(a, b), rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 60).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, max(n, 1)))),
       st.floats(1e-4, 5))
def test_kl_invert_roots(ni, q):
    n, i = ni
    n = max(n, 1)
    i = min(i, n)
    fhat = i / n
    lo, hi = kl_invert(fhat, q)
    assert 0 <= lo <= fhat <= hi <= 1
    # a root stored as a float is off by at most a few ulps; scale by |dK/du| = |u - a| / (u (1 - u))
    for u in (lo, hi):
        if 0 < u < 1 and u != fhat:
            slack = abs(u - fhat) / (u * (1 - u)) * 4 * np.spacing(max(u, 0.5))
            assert abs(kl_direct(fhat, u) - q) <= slack + 1e-10 * q
    mid = 0.5 * (lo + hi)
    if 0 < mid < 1:
        assert kl_direct(fhat, mid) <= q + 1e-12


def test_kl_invert_symmetry():
    for f in (0.0, 0.1, 0.37, 0.5):
        lo, hi = kl_invert(f, 0.3)
        lo2, hi2 = kl_invert(1 - f, 0.3)
        assert lo == pytest.approx(1 - hi2, abs=1e-14) and hi == pytest.approx(1 - lo2, abs=1e-14)
    assert kl_invert(1.0, 0.5) == (math.exp(-0.5), 1.0)


def test_bj_statistic_uniform_formula():
    rng = np.random.default_rng(3)
    for n in (1, 5, 40):
        u = rng.random(n)
        us = np.sort(u)
        i = np.arange(1, n + 1)
        direct = max(max(kl_direct(k / n, x), kl_direct((k - 1) / n, x)) for k, x in zip(i, us))
        assert bj_statistic(empirical_cdf(u), TrueCdf.uniform01()) == pytest.approx(direct, rel=1e-12)
        assert bj_null_statistics(us)[0] == pytest.approx(direct, rel=1e-12)


def test_bj_statistic_degenerate():
    with pytest.raises(ValueError):
        bj_statistic(empirical_cdf([2.0]), TrueCdf.uniform01())


def brute_noncrossing(a, b, reps, seed):
    u = np.sort(np.random.default_rng(seed).random((reps, len(a))), axis=1)
    return np.mean(np.all((u >= a) & (u <= b), axis=1))


def test_noncrossing_closed_forms():
    assert noncrossing_probability([0.2], [0.7]) == pytest.approx(0.5, abs=1e-13)
    # P(U_(1) <= x) = 1 - (1 - x)^2
    assert noncrossing_probability([0, 0], [0.3, 1]) == pytest.approx(1 - 0.7 ** 2, abs=1e-13)
    # P(U_(2) >= x) = 1 - x^2
    assert noncrossing_probability([0, 0.6], [1, 1]) == pytest.approx(1 - 0.36, abs=1e-13)
    # all n points inside [0, x]: x^n
    assert noncrossing_probability([0] * 6, [0.8] * 6) == pytest.approx(0.8 ** 6, rel=1e-12)
    assert noncrossing_probability([0] * 200, [1] * 200) == pytest.approx(1.0, abs=1e-12)
    # Daniels: P(F_n(t) <= c t for all t) = 1 - 1/c,
    # equivalently U_(i) >= i / (c n); here c = 2
    n = 9
    assert noncrossing_probability(np.arange(1, n + 1) / (2 * n), np.ones(n)) == pytest.approx(
        0.5, abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_noncrossing_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(3):
        a = np.sort(rng.random(n) * 0.6)
        b = np.maximum(a + 0.1, np.sort(0.4 + rng.random(n) * 0.6))
        b = np.minimum(np.maximum.accumulate(b), 1.0)
        p = noncrossing_probability(a, b)
        reps = 200_000
        est = brute_noncrossing(a, b, reps, seed=n + 100)
        se = math.sqrt(p * (1 - p) / reps)
        assert abs(est - p) <= 4 * se + 1e-12


def test_noncrossing_validation():
    with pytest.raises(ValueError):
        noncrossing_probability([0.5], [0.4])
    with pytest.raises(ValueError):
        noncrossing_probability([0.2, 0.1], [0.9, 0.9])
    with pytest.raises(ValueError):
        noncrossing_probability([], [])


def test_quantile_n1_closed_form():
    # n = 1: statistic is -log(min(u, 1-u)), quantile ln(2 / alpha)
    for alpha in (0.05, 0.1, 0.3):
        q = bj_null_quantile(1, alpha).q
        assert q == pytest.approx(math.log(2 / alpha), abs=1e-9)


def test_quantile_frozen_values():
    assert bj_null_quantile(30, 0.1).q == pytest.approx(0.143885, abs=2e-6)
    assert bj_null_quantile(50, 0.1).q == pytest.approx(0.088966, abs=2e-6)


def test_quantile_mc_close_to_exact():
    exact = bj_null_quantile(20, 0.1, method="exact").q
    mc = bj_null_quantile(20, 0.1, method="monte-carlo", mc_reps=100_000, seed=1).q
    assert abs(mc - exact) < 0.005
    again = bj_null_quantile(20, 0.1, method="monte-carlo", mc_reps=100_000, seed=1).q
    assert mc == again


@pytest.mark.parametrize("n", [4, 15, 40])
def test_quantile_gives_exact_coverage(n):
    from psdme.bj import _exact_coverage
    q = bj_null_quantile(n, 0.2).q
    assert _exact_coverage(n, q) == pytest.approx(0.8, abs=1e-9)


def test_quantile_validation():
    with pytest.raises(ValueError):
        bj_null_quantile(0, 0.1)
    with pytest.raises(ValueError):
        bj_null_quantile(5, 1.0)
    with pytest.raises(ValueError):
        bj_null_quantile(5, 0.1, method="other")


def test_bj_band_event_equals_statistic_event():
    n, alpha = 12, 0.1
    crit = bj_null_quantile(n, alpha)
    rng = np.random.default_rng(0)
    a, b = _order_stat_bounds(n, crit.q)
    for _ in range(200):
        u = rng.random(n)
        inside = bool(np.all((np.sort(u) >= a) & (np.sort(u) <= b)))
        assert inside == (bj_statistic(empirical_cdf(u), TrueCdf.uniform01()) <= crit.q + 1e-12)


def test_bj_band_shape_and_tails():
    crit = bj_null_quantile(50, 0.1)
    ecdf = empirical_cdf(np.linspace(0, 1, 50))
    band = bj_band(ecdf, crit, config_id="z")
    lo, hi = band.plateau_bounds()
    assert lo.size == 51 and lo[0] == 0.0 and hi[-1] == 1.0
    assert np.all(np.diff(lo) >= 0) and np.all(np.diff(hi) >= 0)
    assert hi[0] < dkw_radius(50, 0.1)
    assert band.to_record()["epsilon"] is None
    with pytest.raises(ValueError):
        bj_band(empirical_cdf([1.0, 2.0]), crit)


def test_bj_band_miscoverage_matches_statistic():
    crit = bj_null_quantile(30, 0.1)
    rng = np.random.default_rng(11)
    from psdme.bands import miscovered
    for _ in range(300):
        ecdf = empirical_cdf(rng.random(30))
        stat = bj_statistic(ecdf, TrueCdf.uniform01())
        if abs(stat - crit.q) > 1e-9:
            assert miscovered(bj_band(ecdf, crit), TrueCdf.uniform01()) == (stat > crit.q)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=40),
       st.floats(0.01, 0.5))
def test_bj_band_values_in_unit_interval(samples, alpha):
    crit = bj_null_quantile(len(samples), alpha)
    band = bj_band(empirical_cdf(samples), crit)
    lo, hi = band(np.linspace(-6, 6, 1000))
    assert np.all((0 <= lo) & (lo <= hi) & (hi <= 1))
    assert np.all(np.diff(lo) >= 0) and np.all(np.diff(hi) >= 0)
