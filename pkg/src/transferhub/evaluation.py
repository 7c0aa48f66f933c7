"""Error metrics, CRPS, rank tables and the Wilcoxon signed-rank test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def nrmse(y, y_hat) -> float:
    """Root mean squared error of normalized power."""
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if len(y) == 0:
        raise ValueError("empty input")
    if len(y) != len(y_hat):
        raise ValueError("length mismatch")
    d = y - y_hat
    return float(np.sqrt(np.mean(d * d)))


def crps_gaussian(mu, sigma, y):
    """Closed-form CRPS of N(mu, sigma^2) at observation ``y`` (elementwise)."""
    mu, sigma, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, y)))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    z = (y - mu) / sigma
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    out = sigma * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * pdf - _INV_SQRT_PI)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    n: int = 20001


def _trapz(f, x):
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(x)))


def crps_numeric(cdf: Callable, y: float, grid: GridSpec) -> float:
    """Trapezoid integral of ``(F(x) - 1{x >= y})^2`` over ``grid``.

    The grid is split at ``y`` so the indicator's jump falls on a node; the
    lower piece ends one ulp below ``y`` so a forecast with a jump exactly at
    ``y`` is scored by its left limit there.
    """
    if not grid.lo < y < grid.hi:
        raise ValueError("grid must contain y")
    n_lo = max(int(round(grid.n * (y - grid.lo) / (grid.hi - grid.lo))), 2)
    n_hi = max(grid.n - n_lo, 2)
    x_lo = np.linspace(grid.lo, y, n_lo)
    x_lo[-1] = np.nextafter(y, -np.inf)
    x_hi = np.linspace(y, grid.hi, n_hi)
    F_lo = np.asarray(cdf(x_lo), dtype=float)
    F_hi = np.asarray(cdf(x_hi), dtype=float)
    if np.any(np.diff(F_lo) < -1e-12) or np.any(np.diff(F_hi) < -1e-12) or F_hi[0] < F_lo[-1] - 1e-12:
        raise ValueError("cdf is not monotone on the grid")
    return _trapz(F_lo**2, x_lo) + _trapz((1.0 - F_hi) ** 2, x_hi)


def gaussian_grid(mu, sigma, y, n_sd: float = 10.0, n: int = 20001) -> GridSpec:
    """A grid spanning ``n_sd`` standard deviations around every component and ``y``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    lo = min(float(np.min(mu - n_sd * sigma)), y - 1e-9 - n_sd * float(np.min(sigma)))
    hi = max(float(np.max(mu + n_sd * sigma)), y + 1e-9 + n_sd * float(np.min(sigma)))
    return GridSpec(lo, hi, n)


def skill(nrmse_a: float, nrmse_b: float) -> float:
    """Negative means ``a`` improves on ``b``."""
    if nrmse_a < 0 or nrmse_b < 0:
        raise ValueError("nRMSE values are nonnegative")
    return nrmse_a - nrmse_b


def rank_table(errors) -> np.ndarray:
    """Mean rank per method (columns) over parks (rows); ties share average ranks."""
    try:
        E = np.array(errors, dtype=float)
    except ValueError:
        raise ValueError("ragged error matrix") from None
    if E.ndim != 2:
        raise ValueError("ragged error matrix")
    if np.any(np.isnan(E)):
        raise ValueError("NaN in error matrix")
    return rankdata(E, axis=1, method="average").mean(axis=0)


@dataclass(frozen=True)
class WilcoxonResult:
    p: float
    verdict: str  # better | worse | no_diff
    statistic: float = 0.0
    n: int = 0


_MARKERS = {"better": "v", "worse": "^", "no_diff": "o"}


def verdict_marker(verdict: str) -> str:
    return _MARKERS[verdict]


def _exact_null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of sign assignments per value of the doubled positive-rank sum."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r else counts
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b, alpha: float = 0.01, exact_max_n: int = 20) -> WilcoxonResult:
    """Two-sided paired signed-rank test on ``a - b``.

    Zero differences are dropped and tied magnitudes share average ranks.  For
    up to ``exact_max_n`` nonzero pairs the null distribution is enumerated
    exactly; above that a normal approximation with continuity correction and
    tie-corrected variance is used.  ``better`` means ``a`` tends to be smaller.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1-D of equal length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(1.0, "no_diff", 0.0, 0)
    if n < 5:
        raise ValueError(f"need at least 5 nonzero differences, got {n}")
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _exact_null_counts(doubled)
        probs = counts / counts.sum()
        t = int(round(2 * w_plus))
        p_low = probs[: t + 1].sum()
        p_high = probs[t:].sum()
        p = min(1.0, 2.0 * min(p_low, p_high))
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        diff = w_plus - mean
        z = (abs(diff) - 0.5) / math.sqrt(var) if var > 0 else 0.0
        p = min(1.0, 2.0 * float(ndtr(-max(z, 0.0))))
    verdict = "no_diff"
    if p < alpha:
        med = float(np.median(d))
        lean = med if med != 0 else w_plus - n * (n + 1) / 4.0
        verdict = "better" if lean < 0 else "worse"
    return WilcoxonResult(float(p), verdict, w_plus, n)
