import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from psdme.bands import ConfidenceBand, build_band, ps_band_width, ss_band_width
from psdme.calibrate import ECalibrator, optimal_tau
from psdme.data import KpiDataset, SynthLinearGaussianConfig, TrueCdf, empirical_cdf
from psdme.posthoc import (
    GaussianGridScenario,
    GuaranteedKpi,
    LinearGaussianScenario,
    TopM,
    best_guaranteed_kpi,
    best_over_selection,
    envelope_threshold,
    evaluate_pipeline,
    fcp,
    parse_selection_rule,
    ratio_threshold,
    select_top_m,
    simulate_fcr,
    width_comparison,
    width_sweep,
)


def bisect_w(x, lo=-60.0, hi=-1.0):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * math.exp(mid) > x:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture
def small():
    return KpiDataset([("a", [3.0, 4.0]), ("b", [1.0, 1.0]), ("c", [2.0, 0.0]),
                       ("d", [1.0, 1.0])])


def test_top_m_examples(small):
    assert select_top_m(small, 2).selected_ids == ("b", "c")
    assert select_top_m(small, 3).selected_ids == ("b", "c", "d")
    with pytest.raises(ValueError):
        select_top_m(small, 0)
    with pytest.raises(ValueError):
        parse_selection_rule("best-3")
    assert str(parse_selection_rule("top-m:4")) == "top-m:4"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.data())
def test_top_m_properties(means, draw):
    data = KpiDataset((f"k{i:02d}", [m]) for i, m in enumerate(means))
    m = draw.draw(st.integers(1, len(means)))
    sel = select_top_m(data, m)
    assert sel.size == m and len(set(sel.selected_ids)) == m
    chosen = {data.ids.index(i) for i in sel.selected_ids}
    worst_in = max(means[i] for i in chosen)
    assert all(means[j] >= worst_in for j in range(len(means)) if j not in chosen)


def test_callable_rule(small):
    res = evaluate_pipeline(small, method="naive", selection_rule=lambda d: ["a"])
    assert res.selection.selected_ids == ("a",)
    with pytest.raises(ValueError):
        evaluate_pipeline(small, method="naive", selection_rule=lambda d: ["zz"])


def test_fcp():
    assert fcp([True, False, False, True]) == 0.5
    assert fcp([]) == 0.0


def test_best_guaranteed_kpi_examples():
    ecdf = empirical_cdf([1.0, 2.0, 3.0, 4.0])
    band = ConfidenceBand("naive", ecdf, radius=0.1)
    # lower: plateaus 0, .15, .4, .65, .9 after knots 1..4
    assert best_guaranteed_kpi(band, 0.1) == 4.0
    assert best_guaranteed_kpi(band, 0.4) == 3.0
    assert best_guaranteed_kpi(ConfidenceBand("naive", ecdf, radius=0.3), 0.05) is None
    wide = ConfidenceBand("berk-jones", ecdf, pointwise=(np.full(5, 0.99), np.ones(5)))
    assert best_guaranteed_kpi(wide, 0.05) == -math.inf
    with pytest.raises(ValueError):
        best_guaranteed_kpi(band, 0.0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(0.0, 0.4),
       st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_guaranteed_kpi_monotone(samples, eps, g1, g2):
    band = ConfidenceBand("naive", empirical_cdf(samples), radius=eps)
    lo_g, hi_g = sorted((g1, g2))
    a, b = best_guaranteed_kpi(band, lo_g), best_guaranteed_kpi(band, hi_g)
    inf = math.inf
    assert (inf if a is None else a) >= (inf if b is None else b)
    # definition check
    if b is not None and b != -inf:
        assert band.lower(b) >= 1 - hi_g
        assert band.left(b)[0] < 1 - hi_g


def test_guaranteed_overall():
    g = GuaranteedKpi(0.1, (("a", None), ("b", 3.0), ("c", 2.0)))
    assert g.overall == ("c", 2.0)
    d = g.to_dict()
    assert d["overall"] == {"id": "c", "x_star": 2.0} and len(d["per_config"]) == 3
    assert GuaranteedKpi(0.1, (("a", None),)).overall is None
    with pytest.raises(ValueError):
        best_over_selection([], 0.1)


def test_pipeline_methods(small):
    big = KpiDataset((f"c{i}", np.arange(20.0) + i) for i in range(6))
    for method in ("ps", "naive", "bj"):
        res = evaluate_pipeline(big, method=method, selection_rule="top-m:2", delta=0.2,
                                gamma_list=(0.5,))
        assert res.selection.selected_ids == ("c0", "c1")
        assert len(res.bands) == 2 and len(res.guaranteed) == 1
    ss = evaluate_pipeline(big, method="ss", selection_rule="top-m:2", split_fraction=0.5, seed=3)
    assert all(b.n == 10 for b in ss.bands)
    assert ss.bands[0].radius == pytest.approx(ss_band_width(10, 6, 2, 0.1))
    with pytest.raises(ValueError):
        evaluate_pipeline(big, method="ss")
    ps = evaluate_pipeline(big, method="ps", selection_rule="top-m:2", tau=0.4)
    assert ps.tau == 0.4 and not ps.heuristic_optimal
    auto = evaluate_pipeline(big, method="ps", selection_rule="top-m:2")
    assert auto.heuristic_optimal and auto.tau == pytest.approx(optimal_tau(0.1, 6, 2))


def test_pipeline_empty_selection(small):
    res = evaluate_pipeline(small, method="ps", selection_rule=lambda d: [], gamma_list=(0.1,))
    assert res.bands == () and res.guaranteed == () and res.mean_radius is None


def test_pipeline_bj_level_is_calibrated():
    data = KpiDataset((f"c{i}", np.linspace(0, 1, 15) + i) for i in range(8))
    res = evaluate_pipeline(data, method="bj", selection_rule="top-m:2", delta=0.1)
    c = ECalibrator(res.tau)
    from psdme.calibrate import calibrator_inverse
    assert res.alpha == pytest.approx(calibrator_inverse(c, 8 / (0.1 * 2)))
    explicit = evaluate_pipeline(data, method="bj", selection_rule="top-m:2", alpha=0.05)
    assert explicit.alpha == 0.05 and explicit.tau is None


def test_pipeline_flags_with_truth():
    data, truth = GaussianGridScenario(8, 30).draw(np.random.default_rng(0))
    res = evaluate_pipeline(data, truth, "ps", "top-m:3")
    assert len(res.flags) == 3 and res.fcp in (0, 1 / 3, 2 / 3, 1)
    assert set(res.to_dict()["miscovered"]) == set(res.selection.selected_ids)


def test_simulate_is_deterministic_and_worker_invariant():
    sc = GaussianGridScenario(10, 20)
    a = simulate_fcr(sc, "naive", "top-m:3", 0.1, trials=30, seed=5, workers=1)
    b = simulate_fcr(sc, "naive", "top-m:3", 0.1, trials=30, seed=5, workers=8)
    assert a.to_dict() == b.to_dict()
    c = simulate_fcr(sc, "naive", "top-m:3", 0.1, trials=30, seed=6)
    assert c.fcp_values != a.fcp_values
    with pytest.raises(ValueError):
        simulate_fcr(sc, "naive", trials=0)


def test_linear_gaussian_scenario_pickles():
    sc = LinearGaussianScenario(SynthLinearGaussianConfig(lambda_grid=(0.1, 1.0, 10.0),
                                                          holdout_size=500))
    clone = pickle.loads(pickle.dumps(sc))
    d1, _ = sc.draw(np.random.default_rng(1))
    d2, _ = clone.draw(np.random.default_rng(1))
    assert d1 == d2


def test_report_stderr():
    sc = GaussianGridScenario(10, 20)
    r = simulate_fcr(sc, "ps", "top-m:3", trials=20, seed=1)
    v = np.array(r.fcp_values)
    assert r.std_error == pytest.approx(v.std(ddof=1) / math.sqrt(20))
    assert set(r.to_dict()) >= {"trials", "fcr", "stderr", "fcp", "method", "scenario", "seed"}


def test_threshold_examples():
    c = ECalibrator(optimal_tau(0.1, 2000, 1000))
    assert ratio_threshold(2000, 1000, 0.1, c) == pytest.approx(0.573073, abs=1e-6)
    w = bisect_w(-0.01 / math.e)
    assert w == pytest.approx(-7.63835, abs=1e-5)
    oracle = math.log(200) / (math.log(2) - w)
    assert envelope_threshold(1000, 100, 0.1) == pytest.approx(oracle, abs=1e-12)
    assert envelope_threshold(1000, 100, 0.1) == pytest.approx(0.63598, abs=1e-4)


def test_optimal_tau_attains_envelope_threshold():
    for s in (10, 100, 500):
        env = envelope_threshold(1000, s, 0.1)
        c = ECalibrator(optimal_tau(0.1, 1000, s))
        assert ratio_threshold(1000, s, 0.1, c) == pytest.approx(env, abs=1e-12)
        for tau in (0.2, 0.5, 0.9):
            assert ratio_threshold(1000, s, 0.1, ECalibrator(tau)) <= env + 1e-15


def test_width_comparison_example():
    c = ECalibrator(optimal_tau(0.1, 2000, 1000))
    comp = width_comparison(100, 50, 2000, 1000, 0.1, c)
    assert comp.ps_narrower
    assert comp.ps_width == pytest.approx(0.179402, abs=1e-6)
    assert comp.ss_width == pytest.approx(0.192064, abs=1e-6)
    assert not width_comparison(100, 60, 2000, 1000, 0.1, c).ps_narrower
    with pytest.raises(ValueError):
        width_comparison(100, 0, 2000, 1000, 0.1, c)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 5000), st.data(), st.integers(1, 2000), st.floats(0.01, 0.5),
       st.floats(0.02, 0.98))
def test_width_sign_matches_threshold(n, data, k, delta, tau):
    n_eval = data.draw(st.integers(1, n))
    s = data.draw(st.integers(1, k))
    c = ECalibrator(tau)
    thr = ratio_threshold(k, s, delta, c)
    ss = ss_band_width(n_eval, k, s, delta)
    ps = ps_band_width(n, k, s, delta, c)
    r = n_eval / n
    if abs(r - thr) > 1e-12:
        assert (ps < ss) == (r < thr)


def test_constructed_crossover():
    # choose delta so that the threshold is exactly n_eval / n = 0.6
    n, n_eval, k, s, tau = 1000, 600, 200, 20, 0.8
    c = ECalibrator(tau)
    delta = brentq(lambda d: ratio_threshold(k, s, d, c) - 0.6, 1e-6, 0.999, xtol=1e-15)
    assert abs(ss_band_width(n_eval, k, s, delta) - ps_band_width(n, k, s, delta, c)) <= 1e-12


def test_width_sweep_columns():
    rows = width_sweep(100, 1000, 10, 0.1, ["auto", 0.5], [0.0, 0.5, 1.0])
    assert list(rows[0]) == ["ratio", "ss_width", "ps_width_tau=auto", "ps_width_tau=0.5"]
    assert rows[0]["ss_width"] == math.inf
    assert rows[1]["ss_width"] > rows[2]["ss_width"]
    assert rows[1]["ps_width_tau=0.5"] == rows[2]["ps_width_tau=0.5"]


def test_band_rebuilt_matches_pipeline():
    data = KpiDataset((f"c{i}", np.arange(12.0) * (i + 1)) for i in range(5))
    res = evaluate_pipeline(data, method="ps", selection_rule="top-m:2", tau=0.6)
    b = res.bands[0]
    ref = build_band(empirical_cdf(data["c0"]), "ps", 5, 2, 0.1, ECalibrator(0.6))
    assert b.radius == ref.radius


def test_truth_length_checked():
    data = KpiDataset([("a", [1.0]), ("b", [2.0])])
    with pytest.raises(ValueError):
        evaluate_pipeline(data, [TrueCdf.uniform01()], "naive", "top-m:1")
    assert TopM(1)(data).selected_ids == ("a",)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5000), st.data(), st.floats(0.01, 0.5))
def test_envelope_threshold_is_necessary(k, data, delta):
    s = data.draw(st.integers(1, k))
    env = envelope_threshold(k, s, delta)
    for tau in np.linspace(0.005, 0.995, 199):
        assert ratio_threshold(k, s, delta, ECalibrator(tau)) <= env + 1e-12


SCENARIO_GRID = [(k, n, d, m) for k in (20, 50) for n in (20, 40) for d in (0.05, 0.1)
                 for m in (k // 5, k // 2)]


@pytest.mark.slow
@pytest.mark.parametrize("method", ["ps", "ss"])
@pytest.mark.parametrize("k,n,delta,m", SCENARIO_GRID)
def test_fcr_control_grid(method, k, n, delta, m):
    r = simulate_fcr(GaussianGridScenario(k, n), method, f"top-m:{m}", delta, trials=400,
                     seed=k * 1000 + n)
    assert r.fcr_estimate <= delta + 3 * r.std_error
