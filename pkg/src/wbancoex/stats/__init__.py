"""First- and second-order SINR statistics."""

from .correlation import IndependenceResult, cross_correlation, independence_check
from .curves import (
    STATS_DOPPLER_HZ,
    ThresholdCurve,
    aod_curve,
    average_curves,
    empirical_aod,
    empirical_lcr,
    lcr_curve,
    load_curve,
    outage_probability,
    outage_threshold,
    save_curve,
    theoretical_aod,
    theoretical_curves,
    theoretical_lcr,
)
from .fitting import (
    FAMILIES,
    FittedDistribution,
    fit_all,
    fit_best_distribution,
    fit_family,
    fitted_cdf,
    nll,
)

__all__ = [
    "FAMILIES", "FittedDistribution", "IndependenceResult", "STATS_DOPPLER_HZ", "ThresholdCurve",
    "aod_curve", "average_curves", "cross_correlation", "empirical_aod", "empirical_lcr",
    "fit_all", "fit_best_distribution", "fit_family", "fitted_cdf", "independence_check",
    "lcr_curve", "load_curve", "nll", "outage_probability", "outage_threshold", "save_curve",
    "theoretical_aod", "theoretical_curves", "theoretical_lcr",
]
