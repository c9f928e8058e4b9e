"""Outage probability, level crossing rate and average outage duration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import special

from ..errors import ParameterError, UndefinedValueError, UnsupportedFamilyError, ValidationError
from .fitting import FittedDistribution, fitted_cdf

CURVE_KINDS = ("outage", "lcr", "aod")
THEORY_FAMILIES = ("lognormal", "gamma")
STATS_DOPPLER_HZ = 1.0
CURVE_HEADER = "threshold_db,value"


@dataclass(frozen=True, eq=False)
class ThresholdCurve:
    kind: str
    thresholds_db: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.thresholds_db, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if self.kind not in CURVE_KINDS:
            raise ParameterError(f"curve kind must be one of {CURVE_KINDS}")
        if th.shape != v.shape or th.ndim != 1:
            raise ParameterError("thresholds and values must be 1-D and of equal length")
        if th.size > 1 and not np.all(np.diff(th) > 0):
            raise ParameterError("thresholds must be strictly ascending")
        finite = v[~np.isnan(v)]
        if np.any(finite < 0):
            raise ParameterError(f"{self.kind} values must be >= 0")
        if self.kind == "outage":
            if np.any(finite > 1):
                raise ParameterError("outage values must lie in [0, 1]")
        object.__setattr__(self, "thresholds_db", th)
        object.__setattr__(self, "values", v)


def _values(series):
    return np.asarray(getattr(series, "values", series), dtype=float)


def _dt(series, dt):
    if dt is None:
        dt = getattr(series, "dt_packet", None)
    if dt is None or not dt > 0:
        raise ParameterError("a positive packet spacing is required")
    return float(dt)


def outage_probability(series, thresholds_db) -> ThresholdCurve:
    """Fraction of packets with SINR strictly below each threshold."""
    v = np.sort(_values(series))
    if v.size == 0:
        raise ParameterError("empty series")
    th = np.atleast_1d(np.asarray(thresholds_db, dtype=float))
    return ThresholdCurve("outage", th, np.searchsorted(v, th, side="left") / v.size)


def outage_threshold(series, probability: float) -> float:
    """Smallest threshold whose outage probability reaches ``probability``."""
    v = np.sort(_values(series))
    if v.size == 0:
        raise ParameterError("empty series")
    if not 0 < probability <= 1:
        raise ParameterError("probability must be in (0, 1]")
    k = math.ceil(probability * v.size - 1e-9)
    return float(v[max(k, 1) - 1])


def downward_crossings(values, threshold_db) -> np.ndarray:
    """Indices i with values[i-1] >= th and values[i] < th."""
    v = _values(values)
    below = v < threshold_db
    return np.nonzero(~below[:-1] & below[1:])[0] + 1


def empirical_lcr(series, threshold_db: float, dt: float | None = None,
                  method: str = "crossings") -> float:
    """Downward crossing rate (Hz) at a threshold.

    ``method="crossings"`` divides the crossing count by the span between the
    first and last crossing, falling back to ``n / T`` with fewer than two
    crossings. ``method="total"`` always uses ``n / T`` with ``T`` the whole
    observation time.
    """
    v = _values(series)
    if v.size < 2:
        raise ParameterError("series needs at least 2 samples")
    step = _dt(series, dt)
    idx = downward_crossings(v, threshold_db)
    n = idx.size
    total = v.size * step
    if method == "total" or n < 2:
        if method not in ("crossings", "total"):
            raise ParameterError(f"unknown LCR method {method!r}")
        return n / total
    if method != "crossings":
        raise ParameterError(f"unknown LCR method {method!r}")
    return n / float((idx[-1] - idx[0]) * step)


def outage_runs(values, threshold_db) -> np.ndarray:
    """Lengths (in samples) of maximal runs strictly below the threshold."""
    below = np.concatenate(([False], _values(values) < threshold_db, [False])).astype(np.int8)
    edges = np.diff(below)
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0]
    return ends - starts


def empirical_aod(series, threshold_db: float, dt: float | None = None) -> float:
    """Mean duration (s) of contiguous below-threshold runs; 0 when there are none."""
    v = _values(series)
    if v.size == 0:
        raise ParameterError("empty series")
    step = _dt(series, dt)
    runs = outage_runs(v, threshold_db)
    if runs.size == 0:
        return 0.0
    return float(runs.sum()) * step / runs.size


def lcr_curve(series, thresholds_db, dt=None, method="crossings") -> ThresholdCurve:
    th = np.atleast_1d(np.asarray(thresholds_db, dtype=float))
    return ThresholdCurve("lcr", th, np.array([empirical_lcr(series, x, dt, method) for x in th]))


def aod_curve(series, thresholds_db, dt=None) -> ThresholdCurve:
    th = np.atleast_1d(np.asarray(thresholds_db, dtype=float))
    return ThresholdCurve("aod", th, np.array([empirical_aod(series, x, dt) for x in th]))


# --- theory ------------------------------------------------------------------------

def _linear(threshold_db):
    return np.power(10.0, np.asarray(threshold_db, dtype=float) / 10.0)


def theoretical_lcr(dist: FittedDistribution, threshold_db, f_d: float = STATS_DOPPLER_HZ):
    """Level crossing rate (Hz) implied by a lognormal or gamma SINR fit.

    lognormal: f_d * exp(-(ln v - mu)^2 / (2 sigma^2))
    gamma:     f_d * sqrt(2 pi) v^(a-1/2) / (Gamma(a) b^(a-1/2)) * exp(-v/b)
    with ``v`` the linear threshold.
    """
    if dist.family not in THEORY_FAMILIES:
        raise UnsupportedFamilyError(
            f"theoretical LCR is defined for {THEORY_FAMILIES}, not {dist.family!r}")
    v = _linear(threshold_db)
    p = dist.params
    if dist.family == "lognormal":
        out = f_d * np.exp(-(np.log(v) - p["mu"]) ** 2 / (2.0 * p["sigma"] ** 2))
    else:
        a, b = p["a"], p["b"]
        log_rate = (math.log(f_d) + 0.5 * math.log(2 * math.pi) + (a - 0.5) * (np.log(v) - math.log(b))
                    - special.gammaln(a) - v / b)
        out = np.exp(log_rate)
    return float(out) if np.ndim(out) == 0 else out


def theoretical_aod(dist: FittedDistribution, threshold_db, f_d: float = STATS_DOPPLER_HZ):
    """F(v) / LCR(v) in seconds; raises where the LCR vanishes."""
    lcr = theoretical_lcr(dist, threshold_db, f_d)
    if np.any(np.asarray(lcr) == 0):
        raise UndefinedValueError("theoretical LCR is zero; outage duration undefined")
    cdf = fitted_cdf(dist, _linear(threshold_db))
    out = np.asarray(cdf) / np.asarray(lcr)
    return float(out) if np.ndim(out) == 0 else out


def theoretical_curves(dist: FittedDistribution, thresholds_db,
                       f_d: float = STATS_DOPPLER_HZ) -> dict[str, ThresholdCurve]:
    """Outage for any family; LCR and AOD only for lognormal/gamma.

    AOD entries where the LCR underflows to zero are NaN.
    """
    th = np.atleast_1d(np.asarray(thresholds_db, dtype=float))
    cdf = np.asarray(fitted_cdf(dist, _linear(th)), dtype=float)
    out = {"outage": ThresholdCurve("outage", th, cdf)}
    if dist.family in THEORY_FAMILIES:
        lcr = np.asarray(theoretical_lcr(dist, th, f_d), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            aod = np.where(lcr > 0, cdf / np.where(lcr > 0, lcr, 1.0), np.nan)
        out["lcr"] = ThresholdCurve("lcr", th, lcr)
        out["aod"] = ThresholdCurve("aod", th, aod)
    return out


def average_curves(curves) -> ThresholdCurve:
    """Point-wise mean of curves sharing kind and threshold grid."""
    curves = list(curves)
    if not curves:
        raise ParameterError("no curves to average")
    first = curves[0]
    for c in curves[1:]:
        if c.kind != first.kind or not np.array_equal(c.thresholds_db, first.thresholds_db):
            raise ValidationError("curves differ in kind or threshold grid")
    vals = np.stack([c.values for c in curves])
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(vals, axis=0) if not np.all(np.isnan(vals)) else vals[0]
    return ThresholdCurve(first.kind, first.thresholds_db, mean)


def save_curve(curve: ThresholdCurve, path, meta: Mapping[str, object] | None = None):
    head = {"kind": curve.kind}
    head.update(meta or {})
    lines = [f"# {k}={v}\n" for k, v in head.items()]
    lines.append(CURVE_HEADER + "\n")
    lines.extend(f"{t!r},{v!r}\n" for t, v in zip(curve.thresholds_db.tolist(), curve.values.tolist()))
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


def load_curve(path) -> ThresholdCurve:
    from ..channel import read_commented_csv

    meta, rows = read_commented_csv(path, CURVE_HEADER)
    th = np.array([float(c[0]) for _, c in rows])
    v = np.array([float(c[1]) for _, c in rows])
    return ThresholdCurve(meta.get("kind", "outage"), th, v)
