"""Signal/interference cross-correlation and a histogram independence check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInputError, ParameterError


def cross_correlation(signal_powers, interference_powers) -> float:
    """Pearson coefficient with population moments."""
    s = np.asarray(signal_powers, dtype=float)
    i = np.asarray(interference_powers, dtype=float)
    if s.shape != i.shape or s.ndim != 1 or s.size < 2:
        raise ParameterError("inputs must be 1-D of equal length >= 2")
    ds = s - s.mean()
    di = i - i.mean()
    vs = float(np.mean(ds * ds))
    vi = float(np.mean(di * di))
    if vs == 0 or vi == 0:
        raise DegenerateInputError("zero variance")
    r = float(np.mean(ds * di)) / (np.sqrt(vs) * np.sqrt(vi))
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class IndependenceResult:
    score: float
    bins: int
    n: int
    undersampled: bool


def independence_check(signal_powers, interference_powers, bins: int = 20) -> IndependenceResult:
    """Total-variation distance between the joint histogram and the product of marginals.

    0 means the empirical joint factorises exactly. ``undersampled`` flags
    fewer samples than histogram cells.
    """
    s = np.asarray(signal_powers, dtype=float)
    i = np.asarray(interference_powers, dtype=float)
    if s.shape != i.shape or s.ndim != 1 or s.size < 2:
        raise ParameterError("inputs must be 1-D of equal length >= 2")
    if bins < 2:
        raise ParameterError("need at least 2 bins per axis")
    if np.ptp(s) == 0 or np.ptp(i) == 0:
        raise DegenerateInputError("zero variance")
    joint, _, _ = np.histogram2d(s, i, bins=bins)
    joint /= s.size
    ps = joint.sum(axis=1)
    pi = joint.sum(axis=0)
    score = 0.5 * float(np.abs(joint - np.outer(ps, pi)).sum())
    return IndependenceResult(score, bins, s.size, s.size < bins * bins)
