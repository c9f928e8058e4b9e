"""Maximum-likelihood fitting over six distribution families.

Parameterisations:

=========== ================ =========================================
family      params           density
=========== ================ =========================================
normal      mu_n, sigma_n    N(mu_n, sigma_n^2)
lognormal   mu, sigma        ln x ~ N(mu, sigma^2)
gamma       a, b             x^(a-1) exp(-x/b) / (Gamma(a) b^a)
weibull     k, lam           (k/lam) (x/lam)^(k-1) exp(-(x/lam)^k)
nakagami_m  m, w             2 m^m x^(2m-1) exp(-m x^2/w) / (Gamma(m) w^m)
rayleigh    scale            x/s^2 exp(-x^2 / (2 s^2))
=========== ================ =========================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import special
from scipy.stats import chi2

from ..errors import DegenerateInputError, ParameterError, UnsupportedFamilyError

FAMILIES = ("normal", "lognormal", "gamma", "weibull", "nakagami_m", "rayleigh")
POSITIVE_FAMILIES = frozenset(FAMILIES) - {"normal"}
PARAM_NAMES = {
    "normal": ("mu_n", "sigma_n"),
    "lognormal": ("mu", "sigma"),
    "gamma": ("a", "b"),
    "weibull": ("k", "lam"),
    "nakagami_m": ("m", "w"),
    "rayleigh": ("scale",),
}
# Rayleigh is the k=2 Weibull and the m=1 Nakagami
NESTS_RAYLEIGH = ("weibull", "nakagami_m")
MIN_SAMPLES = 30
TOL = 1e-8
MAX_ITER = 200


@dataclass(frozen=True)
class FittedDistribution:
    family: str
    params: Mapping[str, float]
    nll: float
    n: int
    skipped: tuple[tuple[str, str], ...] = ()
    note: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedFamilyError(f"unknown family {self.family!r}")
        names = PARAM_NAMES[self.family]
        if set(self.params) != set(names):
            raise ParameterError(f"{self.family} needs params {names}, got {sorted(self.params)}")
        params = {k: float(self.params[k]) for k in names}
        for k, v in params.items():
            if k != "mu_n" and k != "mu" and not v > 0:
                raise ParameterError(f"{self.family}.{k} must be positive, got {v}")
        if self.family == "nakagami_m" and params["m"] < 0.5:
            raise ParameterError("nakagami m must be >= 0.5")
        object.__setattr__(self, "params", params)

    def __getitem__(self, key):
        return self.params[key]

    def as_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params), "nll": self.nll,
                "n": self.n, "skipped": [list(s) for s in self.skipped], "note": self.note}


# --- closed-form log-likelihoods ------------------------------------------------

def nll(family: str, params: Mapping[str, float], x) -> float:
    """Negative log-likelihood of samples ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    p = params
    if family == "normal":
        mu, s = p["mu_n"], p["sigma_n"]
        return 0.5 * n * math.log(2 * math.pi * s * s) + float(np.sum((x - mu) ** 2)) / (2 * s * s)
    if np.any(x <= 0):
        return math.inf
    lx = np.log(x)
    if family == "lognormal":
        mu, s = p["mu"], p["sigma"]
        return (float(lx.sum()) + 0.5 * n * math.log(2 * math.pi * s * s)
                + float(np.sum((lx - mu) ** 2)) / (2 * s * s))
    if family == "gamma":
        a, b = p["a"], p["b"]
        return (n * special.gammaln(a) + n * a * math.log(b)
                - (a - 1) * float(lx.sum()) + float(x.sum()) / b)
    if family == "weibull":
        k, lam = p["k"], p["lam"]
        return (-n * math.log(k) + n * k * math.log(lam) - (k - 1) * float(lx.sum())
                + float(np.sum(np.exp(k * (lx - math.log(lam))))))
    if family == "nakagami_m":
        m, w = p["m"], p["w"]
        return (-n * (math.log(2) + m * math.log(m) - special.gammaln(m) - m * math.log(w))
                - (2 * m - 1) * float(lx.sum()) + m / w * float(np.sum(x * x)))
    if family == "rayleigh":
        s = p["scale"]
        return -float(lx.sum()) + 2 * n * math.log(s) + float(np.sum(x * x)) / (2 * s * s)
    raise UnsupportedFamilyError(f"unknown family {family!r}")


# --- ML estimators -------------------------------------------------------------

def gamma_shape_ml(log_mean_minus_mean_log: float) -> float:
    """Solve ln(a) - digamma(a) = s for the ML gamma shape.

    Starts from the closed-form approximation
    a0 = (3 - s + sqrt((s - 3)^2 + 24 s)) / (12 s) and refines with a Newton
    iteration on 1/a, halving the step whenever it would leave a > 0.
    """
    s = log_mean_minus_mean_log
    if not s > 0:
        raise DegenerateInputError("samples carry no spread for a gamma-shape fit")
    a = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for _ in range(MAX_ITER):
        f = math.log(a) - special.digamma(a) - s
        fp = 1.0 / a - special.polygamma(1, a)
        # generalized Newton step (Minka 2002) expressed on 1/a
        inv = 1.0 / a + f / (a * a * fp)
        step = 1.0
        while not inv * step + (1.0 / a) * (1 - step) > 0:
            step /= 2.0
        a_new = 1.0 / ((1.0 / a) * (1 - step) + inv * step)
        if abs(a_new - a) <= TOL * a:
            return a_new
        a = a_new
    return a


def _fit_normal(x):
    return {"mu_n": float(x.mean()), "sigma_n": float(x.std())}


def _fit_lognormal(x):
    lx = np.log(x)
    return {"mu": float(lx.mean()), "sigma": float(lx.std())}


def _fit_gamma(x):
    s = math.log(x.mean()) - float(np.log(x).mean())
    a = gamma_shape_ml(s)
    return {"a": a, "b": float(x.mean()) / a}


def _fit_nakagami(x):
    y = x * x
    w = float(y.mean())
    s = math.log(w) - float(np.log(y).mean())
    m = max(gamma_shape_ml(s), 0.5)
    return {"m": m, "w": w}


def _fit_rayleigh(x):
    return {"scale": math.sqrt(float(np.mean(x * x)) / 2.0)}


def _fit_weibull(x):
    """Newton on the profile score for the shape k, damped to keep k > 0."""
    lx = np.log(x)
    lx = lx - lx.mean()  # rescale to unit geometric mean; lam is restored below
    sd = float(lx.std())
    if not sd > 0:
        raise DegenerateInputError("samples carry no spread for a Weibull fit")
    k = math.pi / (math.sqrt(6.0) * sd)
    lmax = float(lx.max())

    def score(k):
        # sum(y^k ln y)/sum(y^k) - 1/k with y at unit geometric mean; weights shifted for overflow
        wts = np.exp(k * (lx - lmax))
        sw = wts.sum()
        m1 = float(np.dot(wts, lx)) / sw
        m2 = float(np.dot(wts, lx * lx)) / sw
        return m1 - 1.0 / k, (m2 - m1 * m1) + 1.0 / (k * k)

    for _ in range(MAX_ITER):
        g, gp = score(k)
        step = g / gp
        k_new = k - step
        while k_new <= 0:
            step /= 2.0
            k_new = k - step
        if abs(k_new - k) <= TOL * k:
            k = k_new
            break
        k = k_new
    wts = np.exp(k * (lx - lmax))
    log_lam = (math.log(float(wts.mean())) + k * lmax) / k
    gm = float(np.log(x).mean())
    return {"k": k, "lam": math.exp(gm + log_lam)}


_FITTERS = {
    "normal": _fit_normal,
    "lognormal": _fit_lognormal,
    "gamma": _fit_gamma,
    "weibull": _fit_weibull,
    "nakagami_m": _fit_nakagami,
    "rayleigh": _fit_rayleigh,
}


def _check_samples(samples):
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise ParameterError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("samples must be finite")
    if np.ptp(x) == 0:
        raise DegenerateInputError("zero sample variance")
    return x


def fit_family(family: str, samples) -> FittedDistribution:
    """ML fit of a single family."""
    if family not in _FITTERS:
        raise UnsupportedFamilyError(f"unknown family {family!r}")
    x = _check_samples(samples)
    if family in POSITIVE_FAMILIES and np.any(x <= 0):
        raise ParameterError(f"{family} needs strictly positive samples")
    params = _FITTERS[family](x)
    return FittedDistribution(family, params, nll(family, params, x), x.size)


def fit_all(samples, families: Iterable[str] = FAMILIES):
    """Fit every requested family; returns ``(fits, skipped)``."""
    x = _check_samples(samples)
    fits: dict[str, FittedDistribution] = {}
    skipped = []
    positive = bool(np.all(x > 0))
    for fam in families:
        if fam not in _FITTERS:
            raise UnsupportedFamilyError(f"unknown family {fam!r}")
        if fam in POSITIVE_FAMILIES and not positive:
            skipped.append((fam, "non-positive samples"))
            continue
        params = _FITTERS[fam](x)
        fits[fam] = FittedDistribution(fam, params, nll(fam, params, x), x.size)
    return fits, tuple(skipped)


def fit_best_distribution(samples, families: Sequence[str] = FAMILIES,
                          nested_alpha: float | None = 0.01) -> FittedDistribution:
    """Family with the minimum negative log-likelihood, with its ML parameters.

    Raw NLL can never pick Rayleigh over the Weibull and Nakagami-m families
    that contain it. When the raw winner is one of those and ``nested_alpha``
    is set, Rayleigh is kept instead if a likelihood-ratio test at that level
    does not reject it against every nesting family that was fitted.
    ``nested_alpha=None`` gives the pure minimum-NLL rule.
    """
    fits, skipped = fit_all(samples, families)
    if not fits:
        raise DegenerateInputError("no requested family could be fitted")
    best = min(fits.values(), key=lambda f: (f.nll, FAMILIES.index(f.family)))
    note = ""
    if (nested_alpha is not None and best.family in NESTS_RAYLEIGH and "rayleigh" in fits):
        crit = float(chi2.ppf(1.0 - nested_alpha, df=1))
        ray = fits["rayleigh"]
        lr = [2.0 * (ray.nll - fits[f].nll) for f in NESTS_RAYLEIGH if f in fits]
        if all(v < crit for v in lr):
            note = f"rayleigh kept over nesting {best.family} (LR {max(lr):.3g} < {crit:.3g})"
            best = ray
    return FittedDistribution(best.family, best.params, best.nll, best.n, skipped, note)


# --- CDFs -------------------------------------------------------------------------

def fitted_cdf(dist: FittedDistribution, x):
    """CDF of the fitted distribution at linear value(s) ``x``."""
    x = np.asarray(x, dtype=float)
    p = dist.params
    fam = dist.family
    if fam == "normal":
        out = 0.5 * special.erfc(-(x - p["mu_n"]) / (p["sigma_n"] * math.sqrt(2.0)))
    else:
        xp = np.where(x > 0, x, np.nan)
        if fam == "lognormal":
            out = 0.5 * special.erfc(-(np.log(xp) - p["mu"]) / (p["sigma"] * math.sqrt(2.0)))
        elif fam == "gamma":
            out = special.gammainc(p["a"], xp / p["b"])
        elif fam == "weibull":
            out = -np.expm1(-(xp / p["lam"]) ** p["k"])
        elif fam == "nakagami_m":
            out = special.gammainc(p["m"], p["m"] * xp * xp / p["w"])
        elif fam == "rayleigh":
            out = -np.expm1(-xp * xp / (2.0 * p["scale"] ** 2))
        else:
            raise UnsupportedFamilyError(f"unknown family {fam!r}")
        out = np.where(x > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def sample(family: str, params: Mapping[str, float], n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` variates; used for generate-and-refit checks."""
    p = params
    if family == "normal":
        return rng.normal(p["mu_n"], p["sigma_n"], n)
    if family == "lognormal":
        return rng.lognormal(p["mu"], p["sigma"], n)
    if family == "gamma":
        return rng.gamma(p["a"], p["b"], n)
    if family == "weibull":
        return p["lam"] * rng.weibull(p["k"], n)
    if family == "nakagami_m":
        return np.sqrt(rng.gamma(p["m"], p["w"] / p["m"], n))
    if family == "rayleigh":
        return rng.rayleigh(p["scale"], n)
    raise UnsupportedFamilyError(f"unknown family {family!r}")
