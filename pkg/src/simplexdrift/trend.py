"""Monotone trend tests used for warning trends and the early-warning harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

MIN_LENGTH = 8


@dataclass(frozen=True)
class TrendResult:
    significant: bool
    direction: str
    statistic: float
    p_value: float

    def to_dict(self) -> dict:
        return {"significant": self.significant, "direction": self.direction, "statistic": self.statistic,
                "p_value": self.p_value}


def _direction(sign, significant):
    if not significant:
        return "flat"
    return "rising" if sign > 0 else "falling"


def mann_kendall(series, alpha: float = 0.05) -> TrendResult:
    """Mann-Kendall S with tie-corrected variance and continuity correction.

    ``p_value`` is two-sided.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    if n < MIN_LENGTH:
        raise ValueError(f"trend test needs at least {MIN_LENGTH} points, got {n}")
    diffs = y[None, :] - y[:, None]
    s = float(np.sign(diffs[np.triu_indices(n, k=1)]).sum())
    _, counts = np.unique(y, return_counts=True)
    ties = counts[counts > 1]
    var = (n * (n - 1) * (2 * n + 5) - np.sum(ties * (ties - 1) * (2 * ties + 5))) / 18.0
    if s == 0 or var <= 0:
        return TrendResult(False, "flat", s, 1.0)
    z = (s - np.sign(s)) / np.sqrt(var)
    p = float(2 * stats.norm.sf(abs(z)))
    sig = p <= alpha
    return TrendResult(sig, _direction(s, sig), s, p)


def slope_test(series, alpha: float = 0.05) -> TrendResult:
    """Least-squares slope t-test; ``statistic`` is the t value."""
    y = np.asarray(series, dtype=float)
    if y.size < MIN_LENGTH:
        raise ValueError(f"trend test needs at least {MIN_LENGTH} points, got {y.size}")
    if np.all(y == y[0]):
        return TrendResult(False, "flat", 0.0, 1.0)
    res = stats.linregress(np.arange(y.size), y)
    t = res.slope / res.stderr if res.stderr > 0 else np.sign(res.slope) * np.inf
    sig = res.pvalue <= alpha
    return TrendResult(sig, _direction(res.slope, sig), float(t), float(res.pvalue))


def trend_test(series, alpha: float = 0.05, method: str = "mann-kendall") -> TrendResult:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if method == "mann-kendall":
        return mann_kendall(series, alpha)
    if method == "slope":
        return slope_test(series, alpha)
    raise ValueError(f"unknown trend test {method!r}")
