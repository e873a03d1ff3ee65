"""Evaluation harness: delays, false alarms, attribution fidelity, H1-H3.

Also hosts the comparison detectors that ignore compositional geometry:
Euclidean distance on raw shares, per-part EWMA on raw shares and per-pair
EWMA on log-ratios.  Every detector is reduced to a real-valued score stream
and alarms when the score exceeds a threshold calibrated to a common
stationary false-alarm target, so comparisons are made at matched rates.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import binom, special_ortho_group

from .drift import EnergyProfile, energy
from .errors import ConfigurationError, PreconditionError
from .lineage import CanonicalGroups, LineageMap, apply_event
from .trend import TrendResult, trend_test

__all__ = [
    "EvalConfig",
    "alarm_stream",
    "detection_delay",
    "false_alarm_rate",
    "attribution_fidelity",
    "trend_test",
    "pre_event_trend",
    "h1_statistic",
    "h3_localization",
    "share_matrix",
    "euclidean_scores",
    "ewma_scores",
    "baseline_scores",
    "calibrate_threshold",
    "window_maxima",
    "binomial_interval",
    "coda_scores",
    "pairwise_log_ratios",
    "stationary_windows",
    "energy_in_segments",
]

ALARM_RULES = ("imminence", "warning", "violation", "any")
TREND_METHODS = ("mann-kendall", "slope")
SD_FLOOR = 1e-9
LOG_RATIO_DELTA = 0.65e-6


@dataclass(frozen=True)
class EvalConfig:
    window: int = 24
    min_lead: float = 1.0
    shock_length: int = 10
    shock_multiplier: float = 1.0
    alpha: float = 0.05
    top_k: int = 1
    energy_share: float = 80.0
    target_rate: float = 0.05
    alarm_rule: str = "imminence"
    trend_method: str = "mann-kendall"
    dominance: float = 0.5
    quantile: float = 0.95
    n_rotations: int = 100
    seed: int = 0
    ewma_lambda: float = 0.2
    thresholds: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.window < 1 or self.shock_length < 1:
            raise ConfigurationError("window and shock_length must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if not 0 < self.energy_share <= 100:
            raise ConfigurationError("energy_share is a percentage in (0, 100]")
        if not 0 < self.target_rate < 1:
            raise ConfigurationError("target_rate must lie in (0, 1)")
        if self.alarm_rule not in ALARM_RULES:
            raise ConfigurationError(f"alarm_rule must be one of {ALARM_RULES}")
        if self.trend_method not in TREND_METHODS:
            raise ConfigurationError(f"trend_method must be one of {TREND_METHODS}")
        if self.top_k < 0:
            raise ConfigurationError("top_k must be non-negative")
        object.__setattr__(self, "thresholds", dict(self.thresholds))

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "EvalConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown eval config key(s): {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# -- alarms and delays -------------------------------------------------------


def _is_alarm(report, rule: str) -> bool:
    alerts = report.alerts
    if rule == "imminence":
        return "imminence" in alerts or "violation" in alerts
    if rule == "warning":
        return "distance" in alerts
    if rule == "violation":
        return "violation" in alerts
    if rule == "any":
        return bool(alerts)
    raise ConfigurationError(f"unknown alarm rule {rule!r}; choose from {ALARM_RULES}")


def alarm_stream(reports, rule: str = "imminence") -> np.ndarray:
    return np.array([_is_alarm(r, rule) for r in reports], dtype=bool)


@dataclass(frozen=True)
class EventDelay:
    constraint: str
    crossing: int
    alarm: int | None
    delay: int | None
    lead: int | None

    @property
    def missed(self) -> bool:
        return self.alarm is None

    def to_dict(self) -> dict:
        return {**asdict(self), "missed": self.missed}


@dataclass(frozen=True)
class DelayStats:
    events: tuple
    false_alarms: int
    rule: str
    window: int

    @property
    def n_missed(self) -> int:
        return sum(e.missed for e in self.events)

    def _values(self, attr, missing):
        return np.array([missing if e.missed else getattr(e, attr) for e in self.events], dtype=float)

    @property
    def median_delay(self) -> float | None:
        return float(np.median(self._values("delay", math.inf))) if self.events else None

    @property
    def median_lead(self) -> float | None:
        return float(np.median(self._values("lead", -math.inf))) if self.events else None

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "window": self.window,
            "events": [e.to_dict() for e in self.events],
            "missed": self.n_missed,
            "false_alarms": self.false_alarms,
            "median_delay": self.median_delay,
            "median_lead": self.median_lead,
        }


def detection_delay(reports, crossings: Mapping[str, int], rule: str = "imminence", window: int = 24,
                    alarms=None) -> DelayStats:
    """Delay from each labelled crossing to the first alarm at ``t >= c - window``.

    Negative delays are early warnings (``lead = -delay``); alarms before the
    earliest pre-event window are false alarms.  A precomputed boolean
    ``alarms`` stream aligned with ``reports`` may replace the rule.
    """
    ts = np.array([r.t for r in reports], dtype=int)
    flags = alarm_stream(reports, rule) if alarms is None else np.asarray(alarms, dtype=bool)
    alarms = ts[flags]
    events = []
    for name, c in sorted(crossings.items(), key=lambda kv: (kv[1], kv[0])):
        hits = alarms[alarms >= c - window]
        if hits.size:
            a = int(hits[0])
            events.append(EventDelay(name, int(c), a, a - int(c), int(c) - a))
        else:
            events.append(EventDelay(name, int(c), None, None, None))
    false_alarms = 0
    if crossings:
        false_alarms = int(np.sum(alarms < min(crossings.values()) - window))
    return DelayStats(tuple(events), false_alarms, rule, window)


def _segment_bounds(segments):
    for s in segments:
        if isinstance(s, Mapping):
            if s.get("stationary", True):
                yield int(s["start"]), int(s["end"])
        else:
            yield int(s[0]), int(s[1])


@dataclass(frozen=True)
class FalseAlarmRate:
    rate: float | None
    windows: int
    alarmed: int

    def to_dict(self) -> dict:
        return asdict(self)


def false_alarm_rate(reports, segments, rule: str = "imminence", window: int | None = None, skip: int = 0,
                     alarms=None) -> FalseAlarmRate:
    """Fraction of stationary windows holding at least one alarm.

    Each stationary segment (after dropping its first ``skip`` steps) is cut
    into consecutive windows of ``window`` steps; a short tail is kept as its
    own window.  ``window=None`` treats each segment as one window.  A
    precomputed boolean ``alarms`` stream may replace the rule.
    """
    ts = np.array([r.t for r in reports], dtype=int)
    flags = alarm_stream(reports, rule) if alarms is None else np.asarray(alarms, dtype=bool)
    n = hit = 0
    for start, end in _segment_bounds(segments):
        start += skip
        if end <= start:
            continue
        size = window or (end - start)
        for lo in range(start, end, size):
            hi = min(lo + size, end)
            n += 1
            hit += bool(np.any(flags[(ts >= lo) & (ts < hi)]))
    return FalseAlarmRate(hit / n if n else None, n, hit)


def attribution_fidelity(reports, segments, balance_names: Sequence[str], k: int, dominance: float = 0.5):
    """Share of drift segments whose dominant injected balances are all in the top-k.

    The last report of each segment is judged.  Dominant balances are those
    whose drift coordinate is at least ``dominance`` times the largest one in
    magnitude.  Returns ``None`` when no segment carries drift.
    """
    by_t = {r.t: r for r in reports}
    trials = successes = 0
    for s in segments:
        if s.get("stationary", False):
            continue
        u = np.abs(np.asarray(s["drift"], dtype=float))
        if not np.any(u) or s.get("beta", 1.0) == 0:
            continue
        trials += 1
        if k <= 0:
            continue
        dominant = {balance_names[j] for j in np.flatnonzero(u >= dominance * u.max())}
        last = next((by_t[t] for t in range(int(s["end"]) - 1, int(s["start"]) - 1, -1) if t in by_t), None)
        if last is None or last.no_drift:
            continue
        top = {name for name, _ in last.attribution[:k]}
        successes += dominant <= top
    return successes / trials if trials else None


def pre_event_trend(reports, crossing: int, window: int, alpha: float = 0.05,
                    method: str = "mann-kendall") -> TrendResult | None:
    """Trend test on reference distances in ``[crossing - window, crossing)``."""
    d = [r.distance for r in reports if crossing - window <= r.t < crossing and r.distance is not None]
    if len(d) < 8:
        return None
    return trend_test(d, alpha, method)


# -- H1 / H3 -----------------------------------------------------------------


@dataclass(frozen=True)
class H1Result:
    norm: float | None
    quantile: float | None
    exceeds: bool
    evaluable: bool

    def to_dict(self) -> dict:
        return asdict(self)


def h1_statistic(dz_series, shock: tuple, baseline: tuple, length: int, q: float = 0.95) -> H1Result:
    """Mean-drift norm over a shock window against baseline window norms.

    ``shock`` and ``baseline`` are half-open index ranges into ``dz_series``;
    baseline norms are taken over every sliding window of ``length`` steps.
    """
    dz = np.asarray(dz_series, dtype=float)
    if dz.ndim == 1:
        dz = dz[:, None]
    s0, s1 = shock
    b0, b1 = baseline
    if s1 <= s0 or b1 <= b0:
        raise PreconditionError("shock and baseline windows must be non-empty")
    if s1 - s0 < length or b1 - b0 < length:
        return H1Result(None, None, False, False)
    norm = float(np.linalg.norm(dz[s0:s1].mean(axis=0)))
    csum = np.vstack([np.zeros(dz.shape[1]), np.cumsum(dz[b0:b1], axis=0)])
    means = (csum[length:] - csum[:-length]) / length
    base = np.linalg.norm(means, axis=1)
    thr = float(np.quantile(base, q))
    return H1Result(norm, thr, norm > thr, True)


@dataclass(frozen=True)
class H3Result:
    share: float
    satisfied: bool
    baseline_share: float
    k: int

    def to_dict(self) -> dict:
        return asdict(self)


def _top_share(e, k):
    total = e.sum()
    if total <= 0:
        return 0.0
    return float(np.sort(e)[::-1][:k].sum() / total)


def h3_localization(profile: EnergyProfile, k: int, p: float = 80.0, n_rotations: int = 100, seed: int = 0) -> H3Result:
    """Top-k energy share against ``p`` percent and a random-rotation baseline.

    The baseline is the mean top-k share after re-expressing the increments in
    ``n_rotations`` random orthonormal bases of the same subspace.
    """
    e = np.asarray(profile.energy, dtype=float)
    dim = e.size
    if k >= dim:
        return H3Result(1.0, True, 1.0, k)
    share = _top_share(e, k)
    if dim < 2:
        baseline = share
    else:
        rots = special_ortho_group.rvs(dim, size=n_rotations, random_state=np.random.Generator(np.random.PCG64(seed)))
        rots = rots.reshape(n_rotations, dim, dim)
        rotated = np.einsum("rij,jk,rik->ri", rots, profile.scatter, rots)
        baseline = float(np.mean([_top_share(r, k) for r in rotated]))
    return H3Result(share, share * 100 >= p, baseline, k)


# -- comparison detectors ----------------------------------------------------


def share_matrix(observations, groups: CanonicalGroups | None = None, lineage: Mapping | None = None,
                 events: Mapping | None = None):
    """Closed raw shares as a ``(T, P)`` matrix plus column ids.

    Leaf level by default: the column set is the union of all part ids and a
    part absent at time ``t`` contributes 0.  With ``groups``, leaves are summed
    into canonical groups through the lineage map, applying ``events`` (a
    mapping of t to event lists) as they come due.
    """
    if groups is None:
        cols = []
        seen = set()
        for o in observations:
            for p in o.parts:
                if p not in seen:
                    seen.add(p)
                    cols.append(p)
        index = {p: i for i, p in enumerate(cols)}
        out = np.zeros((len(observations), len(cols)))
        for i, o in enumerate(observations):
            for p, v in o.parts.items():
                out[i, index[p]] = v
    else:
        cols = list(groups)
        m = LineageMap(groups, dict(lineage or {}))
        out = np.zeros((len(observations), len(cols)))
        for i, o in enumerate(observations):
            for ev in (events or {}).get(o.t, ()):
                m = apply_event(m, ev)
            for p, v in o.parts.items():
                out[i, groups.index(m.group_of(p))] += v
    totals = out.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise PreconditionError("every observation needs positive total mass")
    return out / totals, cols


def _reference_rows(x, ref_len):
    if ref_len < 2 or ref_len > len(x):
        raise PreconditionError(f"calibration needs a stationary prefix of at least 2 samples (got {ref_len})")
    return x[:ref_len]


def euclidean_scores(shares, ref_len: int) -> np.ndarray:
    """Euclidean distance of raw shares to the mean share over the prefix."""
    s = np.asarray(shares, dtype=float)
    ref = _reference_rows(s, ref_len).mean(axis=0)
    return np.linalg.norm(s - ref, axis=1)


def ewma_scores(series, ref_len: int, lam: float = 0.2) -> np.ndarray:
    """Largest standardised EWMA excursion across columns.

    Each column's EWMA starts at its prefix mean and is scaled by the
    asymptotic EWMA standard deviation of the prefix.
    """
    y = np.asarray(series, dtype=float)
    prefix = _reference_rows(y, ref_len)
    mu = prefix.mean(axis=0)
    sd = np.maximum(prefix.std(axis=0, ddof=1), SD_FLOOR) * math.sqrt(lam / (2 - lam))
    e = mu.copy()
    out = np.empty(len(y))
    for t, row in enumerate(y):
        e = lam * row + (1 - lam) * e
        out[t] = np.max(np.abs(e - mu) / sd)
    return out


def pairwise_log_ratios(shares, delta: float = LOG_RATIO_DELTA) -> np.ndarray:
    logs = np.log(np.maximum(np.asarray(shares, dtype=float), delta))
    pairs = list(combinations(range(logs.shape[1]), 2))
    return np.column_stack([logs[:, i] - logs[:, j] for i, j in pairs]) if pairs else np.zeros((len(logs), 0))


BASELINE_METHODS = ("euclidean", "part-ewma", "pair-log-ratio-ewma")


def baseline_scores(shares, ref_len: int, lam: float = 0.2) -> dict:
    return {
        "euclidean": euclidean_scores(shares, ref_len),
        "part-ewma": ewma_scores(shares, ref_len, lam),
        "pair-log-ratio-ewma": ewma_scores(pairwise_log_ratios(shares), ref_len, lam),
    }


def coda_scores(reports) -> np.ndarray:
    """Warning score of the monitor (``-inf`` while the baseline is not ready)."""
    return np.array([-math.inf if r.score is None or r.gated else r.score for r in reports])


def window_maxima(scores, windows) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    return np.array([s[lo:hi].max() for lo, hi in windows])


def calibrate_threshold(maxima, target: float = 0.05) -> float:
    """Threshold whose exceedance rate over window maxima is ``target``."""
    m = np.asarray(maxima, dtype=float)
    m = m[np.isfinite(m)]
    if m.size == 0:
        raise PreconditionError("calibration needs at least one stationary window with a finite score")
    return float(np.quantile(m, 1 - target, method="higher"))


def binomial_interval(n: int, p: float, level: float = 0.95) -> tuple:
    """Central interval for the observed rate of ``n`` Bernoulli(p) windows."""
    lo, hi = binom.interval(level, n, p)
    return float(lo / n), float(hi / n)


def stationary_windows(segments, window: int, skip: int = 0) -> list:
    out = []
    for start, end in _segment_bounds(segments):
        start += skip
        for lo in range(start, end - window + 1, window):
            out.append((lo, lo + window))
    return out


def energy_in_segments(balances, segments, stationary: bool = False) -> EnergyProfile:
    """Balance energy over the increments inside the chosen segments."""
    z = np.asarray(balances, dtype=float)
    dz = np.diff(z, axis=0)
    rows = []
    for s in segments:
        if bool(s.get("stationary", False)) != stationary:
            continue
        lo, hi = int(s["start"]), min(int(s["end"]), len(dz))
        rows.extend(range(lo, hi))
    if not rows:
        raise PreconditionError("no increments fall inside the selected segments")
    return energy(dz[rows])
