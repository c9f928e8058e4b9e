import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import scan

from wbancoex.errors import ParameterError, UndefinedValueError, UnsupportedFamilyError, ValidationError
from wbancoex.link import SinrSeries
from wbancoex.stats import (
    FittedDistribution,
    ThresholdCurve,
    aod_curve,
    average_curves,
    empirical_aod,
    empirical_lcr,
    fitted_cdf,
    lcr_curve,
    load_curve,
    outage_probability,
    outage_threshold,
    save_curve,
    theoretical_aod,
    theoretical_curves,
    theoretical_lcr,
)

LOGN = FittedDistribution("lognormal", {"mu": 2.1292, "sigma": 0.6879}, 0.0, 1)
GAMMA = FittedDistribution("gamma", {"a": 2.5504, "b": 2.7798}, 0.0, 1)


def db(x):
    return 10 * math.log10(x)


# --- outage ------------------------------------------------------------------------

def test_outage_hand_count():
    c = outage_probability([1, 2, 3, 4], [2.5])
    assert c.values[0] == 0.5 and c.kind == "outage"


def test_outage_limits():
    c = outage_probability([1, 2, 3, 4], [0.0, 1.0, 4.0, 4.1])
    assert list(c.values) == [0.0, 0.0, 0.75, 1.0]


@given(st.lists(st.integers(-30, 30), min_size=1, max_size=60), st.lists(st.integers(-35, 35), min_size=1))
def test_outage_is_the_empirical_cdf(values, thresholds):
    th = np.unique(np.array(thresholds, dtype=float) + 0.5 * (np.array(thresholds) % 2))
    c = outage_probability(values, th)
    ref = [sum(v < t for v in values) / len(values) for t in th]
    assert list(c.values) == ref
    assert np.all(np.diff(c.values) >= 0)


def test_outage_threshold_inverse():
    v = np.arange(1.0, 101.0)
    assert outage_threshold(v, 0.1) == 10.0
    assert outage_probability(v, [outage_threshold(v, 0.1) + 1e-9]).values[0] >= 0.1
    with pytest.raises(ParameterError):
        outage_threshold(v, 0.0)
    with pytest.raises(ParameterError):
        outage_probability([], [1.0])


# --- empirical LCR / AOD ------------------------------------------------------------

def test_lcr_hand_count():
    assert empirical_lcr([5, 1, 6, 2, 7], 3.0, dt=1.0) == 1.0


def test_lcr_all_above():
    assert empirical_lcr([5, 6, 7], 3.0, dt=1.0) == 0.0


def test_lcr_single_crossing_uses_total_time():
    v = [5, 5, 5, 1, 1, 1, 1, 1, 1, 1]
    assert empirical_lcr(v, 3.0, dt=1.0) == pytest.approx(0.1)


def test_lcr_method_total_and_errors():
    assert empirical_lcr([5, 1, 6, 2, 7], 3.0, dt=1.0, method="total") == pytest.approx(0.4)
    with pytest.raises(ParameterError):
        empirical_lcr([5, 1, 6, 2, 7], 3.0, dt=1.0, method="bogus")
    with pytest.raises(ParameterError):
        empirical_lcr([5], 3.0, dt=1.0)
    with pytest.raises(ParameterError):
        empirical_lcr([5, 1], 3.0)


def test_lcr_equal_to_threshold_counts_as_above():
    # value == th is not in outage, so 3 -> 1 is a crossing
    assert empirical_lcr([3, 1, 3, 1], 3.0, dt=1.0) == 1.0


def test_aod_hand_count():
    assert empirical_aod([5, 1, 1, 6, 2, 7], 3.0, dt=1.0) == 1.5


def test_aod_none_and_all_below():
    assert empirical_aod([5, 6, 7], 3.0, dt=1.0) == 0.0
    assert empirical_aod([1, 2, 1, 0], 3.0, dt=0.25) == 1.0


def test_series_carries_its_packet_spacing():
    s = SinrSeries("or", 0.5, np.array([5, 1, 6, 2, 7], dtype=float))
    assert empirical_lcr(s, 3.0) == 2.0
    assert empirical_aod(s, 3.0) == 0.5
    assert list(lcr_curve(s, [0.0, 3.0]).values) == [0.0, 2.0]
    assert list(aod_curve(s, [0.0, 3.0]).values) == [0.0, 0.5]


@given(st.lists(st.integers(0, 9), min_size=2, max_size=80), st.integers(0, 10),
       st.sampled_from([0.01, 0.04, 1.0]))
def test_brute_force_scanner_agrees(values, th, dt):
    lcr, aod = scan(values, th + 0.5, dt)
    assert empirical_lcr(values, th + 0.5, dt=dt) == pytest.approx(lcr, rel=1e-12)
    assert empirical_aod(values, th + 0.5, dt=dt) == pytest.approx(aod, rel=1e-12)


def test_aod_times_lcr_tracks_time_fraction():
    rng = np.random.default_rng(3)
    rho = math.exp(-1 / 20)
    x = np.empty(50_000)
    x[0] = rng.normal()
    e = rng.normal(size=x.size) * math.sqrt(1 - rho * rho)
    for i in range(1, x.size):
        x[i] = rho * x[i - 1] + e[i]
    for q in (0.2, 0.5, 0.8):
        th = float(np.quantile(x, q))
        frac = float(np.mean(x < th))
        prod = empirical_aod(x, th, 0.01) * empirical_lcr(x, th, 0.01, method="total")
        assert prod == pytest.approx(frac, rel=0.15)


# --- theory -------------------------------------------------------------------------

def test_lognormal_lcr_peaks_at_mu():
    th = db(math.exp(2.1292))
    assert theoretical_lcr(LOGN, th, f_d=1.0) == pytest.approx(1.0, rel=1e-13)
    assert theoretical_lcr(LOGN, th, f_d=2.5) == pytest.approx(2.5, rel=1e-13)


def test_lognormal_lcr_one_sigma():
    th = db(math.exp(2.1292 + 0.6879))
    assert theoretical_lcr(LOGN, th) == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert theoretical_lcr(LOGN, th) == pytest.approx(0.6065, abs=1e-4)


@given(st.floats(0.1, 20.0), st.floats(-20.0, 20.0), st.floats(0.1, 5.0))
def test_gamma_half_shape_simplifies(b, th, f_d):
    d = FittedDistribution("gamma", {"a": 0.5, "b": b}, 0.0, 1)
    v = 10 ** (th / 10)
    assert theoretical_lcr(d, th, f_d) == pytest.approx(f_d * math.sqrt(2) * math.exp(-v / b), rel=1e-12)


def test_theoretical_aod_examples():
    assert theoretical_aod(LOGN, db(math.exp(2.1292)), f_d=2.0) == pytest.approx(0.25, rel=1e-13)
    # deep in the lower tail the CDF underflows to 0 while the LCR is still positive
    assert fitted_cdf(LOGN, 10 ** -10.4) == 0.0 and theoretical_lcr(LOGN, -104.0) > 0
    assert theoretical_aod(LOGN, -104.0) == 0.0


@pytest.mark.parametrize("dist", [LOGN, GAMMA], ids=["lognormal", "gamma"])
def test_aod_lcr_identity(dist):
    th = np.linspace(-10, 25, 100)
    lcr = theoretical_lcr(dist, th)
    aod = theoretical_aod(dist, th)
    np.testing.assert_allclose(aod * lcr, fitted_cdf(dist, 10 ** (th / 10)), rtol=1e-14, atol=0)


def test_theory_errors():
    normal = FittedDistribution("normal", {"mu_n": 1.0, "sigma_n": 1.0}, 0.0, 1)
    with pytest.raises(UnsupportedFamilyError):
        theoretical_lcr(normal, 0.0)
    with pytest.raises(UnsupportedFamilyError):
        theoretical_aod(normal, 0.0)
    with pytest.raises(UndefinedValueError):
        theoretical_aod(GAMMA, 60.0)


def test_theoretical_curves():
    th = np.linspace(-40, 60, 201)
    c = theoretical_curves(GAMMA, th)
    assert set(c) == {"outage", "lcr", "aod"}
    assert np.all(np.diff(c["outage"].values) >= 0)
    assert np.isnan(c["aod"].values[-1])
    rayl = FittedDistribution("rayleigh", {"scale": 1.0}, 0.0, 1)
    assert set(theoretical_curves(rayl, th)) == {"outage"}


# --- curve containers ---------------------------------------------------------------

def test_curve_invariants():
    with pytest.raises(ParameterError):
        ThresholdCurve("outage", [1.0, 0.0], [0.0, 0.0])
    with pytest.raises(ParameterError):
        ThresholdCurve("outage", [0.0], [1.5])
    with pytest.raises(ParameterError):
        ThresholdCurve("lcr", [0.0], [-1.0])
    with pytest.raises(ParameterError):
        ThresholdCurve("snr", [0.0], [0.0])


def test_curve_round_trip(tmp_path):
    c = ThresholdCurve("aod", np.array([-1.5, 0.0, 0.1]), np.array([0.0, 1 / 3, np.nan]))
    save_curve(c, tmp_path / "c.csv", {"seed": 4})
    text = (tmp_path / "c.csv").read_text()
    assert text.startswith("# kind=aod\n# seed=4\nthreshold_db,value\n")
    back = load_curve(tmp_path / "c.csv")
    assert back.kind == "aod"
    np.testing.assert_array_equal(back.thresholds_db, c.thresholds_db)
    np.testing.assert_array_equal(back.values, c.values)


def test_average_curves():
    a = ThresholdCurve("lcr", [0.0, 1.0], [1.0, np.nan])
    b = ThresholdCurve("lcr", [0.0, 1.0], [3.0, 2.0])
    m = average_curves([a, b])
    assert list(m.values) == [2.0, 2.0]
    with pytest.raises(ValidationError):
        average_curves([a, ThresholdCurve("aod", [0.0, 1.0], [1.0, 1.0])])
    with pytest.raises(ParameterError):
        average_curves([])
