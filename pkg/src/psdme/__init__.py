"""Post-selection distributional model evaluation.

Uniform confidence bands for KPI CDFs of configurations chosen by an
arbitrary data-dependent rule, with false coverage rate control.
"""
from .bands import (
    ConfidenceBand,
    build_band,
    confidence_set_contains,
    dkw_pvalue,
    evalue_for_candidate,
    kolmogorov_distance,
    miscovered,
    naive_band_width,
    ps_band_width,
    ss_band_width,
)
from .bj import bernoulli_kl, bj_band, bj_null_quantile, bj_statistic, kl_invert, noncrossing_probability
from .calibrate import (
    ECalibrator,
    calibrate,
    calibrator_inverse,
    lambert_w_lower,
    optimal_tau,
    vovk_sellke,
    vovk_sellke_inverse,
)
from .data import (
    EmpiricalCdf,
    KpiDataset,
    SynthLinearGaussianConfig,
    TrueCdf,
    empirical_cdf,
    load_dataset,
    save_dataset,
    split_dataset,
    synth_gaussian_grid,
    synth_linear_gaussian,
    true_cdf_eval,
)
from .estimator import PostSelectionBands
from .posthoc import (
    GaussianGridScenario,
    LinearGaussianScenario,
    best_guaranteed_kpi,
    best_over_selection,
    evaluate_pipeline,
    fcp,
    select_top_m,
    simulate_fcr,
    width_comparison,
)

__version__ = "0.1.0"
