"""Per-timestep drift monitor.

:class:`Monitor` owns the mutable per-stream state (lineage map, drift
estimate, reference, warning baseline) and turns each :class:`Observation`
into a :class:`DriftReport`.  One monitor per stream; calls must be
sequential.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import boundary as bd
from . import drift as dr
from . import lineage as lg
from .coda import (
    DEFAULT_DETECTION_LIMIT,
    Composition,
    ContrastBasis,
    closure,
    ilr,
    replacement_delta,
    sbp_to_basis,
    zero_replace,
)
from .errors import (
    AlignmentError,
    ConfigurationError,
    DomainError,
    NotApplicableError,
    RefusedError,
    SequencingError,
)
from .trend import MIN_LENGTH, trend_test

LEVELS = ("none", "watch", "warn", "critical")
DEFAULT_MULTIPLIERS = (2.0, 4.0, 8.0)

UNDEFINED, VIOLATED = "undefined", "violated"


def _section(d, name, allowed):
    sec = dict(d.get(name) or {})
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {name!r}: {sorted(unknown)}")
    return sec


@dataclass(frozen=True)
class MonitorConfig:
    groups: lg.CanonicalGroups
    basis: ContrastBasis
    safe_set: bd.SafeSet = field(default_factory=bd.SafeSet)
    lineage: Mapping = field(default_factory=dict)
    c_min: float = lg.DEFAULT_C_MIN
    m_max: float = lg.DEFAULT_M_MAX
    level_multipliers: tuple = DEFAULT_MULTIPLIERS
    lambda_alert: float = 1.0
    trend_alpha: float = 0.05
    trend_window: int = 12
    mad_floor: float = 1e-9
    ewma_lambda: float = dr.DEFAULT_LAMBDA
    clip: float = dr.DEFAULT_CLIP
    mad_window: int = dr.DEFAULT_MAD_WINDOW
    smoothing_warmup: int = dr.DEFAULT_WARMUP
    direction_floor: float = dr.DEFAULT_DIRECTION_FLOOR
    reference_warmup: int = bd.DEFAULT_REF_WARMUP
    reference_rate: float = bd.DEFAULT_REF_RATE
    baseline_window: int = 28
    lambda_max: float = bd.DEFAULT_LAMBDA_MAX
    eps: float = bd.DEFAULT_EPS
    verify_crossing: bool = True
    detection_limit: float = DEFAULT_DETECTION_LIMIT
    part_detection_limits: Mapping = field(default_factory=dict)
    top_k: int = 3
    other_top_k: int = 3
    growth_ratio: float = lg.DEFAULT_GROWTH_RATIO
    growth_window: int = lg.DEFAULT_GROWTH_WINDOW
    churn_window: int = 8

    def __post_init__(self):
        if self.basis.parts != self.groups.groups:
            raise ConfigurationError(
                f"basis parts {list(self.basis.parts)} must equal the canonical groups {list(self.groups)}"
            )
        for c in self.safe_set:
            missing = [p for p in c.coeffs if p not in self.groups]
            if missing:
                raise ConfigurationError(f"constraint {c.name!r} references unknown group(s) {missing}")
        bad = {p: g for p, g in self.lineage.items() if g not in self.groups}
        if bad:
            raise ConfigurationError(f"lineage assigns parts to unknown groups: {bad}")
        m = tuple(float(v) for v in self.level_multipliers)
        if len(m) != 3 or not (0 < m[0] < m[1] < m[2]):
            raise ConfigurationError("level multipliers must be three increasing positive numbers")
        object.__setattr__(self, "level_multipliers", m)
        if self.trend_window < MIN_LENGTH:
            raise ConfigurationError(f"trend window must be at least {MIN_LENGTH}")
        if self.baseline_window < 2:
            raise ConfigurationError("baseline window must hold at least 2 samples")
        if self.top_k < 1 or self.other_top_k < 1:
            raise ConfigurationError("top-k settings must be at least 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "MonitorConfig":
        known = {
            "groups", "basis", "lineage", "constraints", "include_share_barriers", "thresholds",
            "smoothing", "reference", "boundary", "zero_limits", "attribution", "other", "drilldown",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {sorted(unknown)}")
        if "groups" not in d or "basis" not in d:
            raise ConfigurationError("config needs 'groups' and 'basis'")
        groups = lg.CanonicalGroups(tuple(d["groups"]))
        b = d["basis"]
        basis = sbp_to_basis(b["sbp"], names=b.get("names"), parts=groups.groups)
        constraints = tuple(bd.LogContrastConstraint.from_dict(c) for c in d.get("constraints", ()))
        safe = bd.SafeSet(constraints, bool(d.get("include_share_barriers", True)))
        th = _section(d, "thresholds", {"c_min", "m_max", "levels", "lambda_alert", "trend_alpha", "trend_window", "mad_floor"})
        sm = _section(d, "smoothing", {"lambda", "clip", "mad_window", "warmup", "direction_floor"})
        rf = _section(d, "reference", {"warmup", "rate", "baseline_window"})
        bo = _section(d, "boundary", {"lambda_max", "eps", "verify"})
        zl = _section(d, "zero_limits", {"default", "parts"})
        at = _section(d, "attribution", {"top_k"})
        ot = _section(d, "other", {"top_k", "growth_ratio", "window"})
        dd = _section(d, "drilldown", {"churn_window"})
        kw = dict(
            c_min=th.get("c_min"), m_max=th.get("m_max"), level_multipliers=th.get("levels"),
            lambda_alert=th.get("lambda_alert"), trend_alpha=th.get("trend_alpha"),
            trend_window=th.get("trend_window"), mad_floor=th.get("mad_floor"),
            ewma_lambda=sm.get("lambda"), clip=sm.get("clip"), mad_window=sm.get("mad_window"),
            smoothing_warmup=sm.get("warmup"), direction_floor=sm.get("direction_floor"),
            reference_warmup=rf.get("warmup"), reference_rate=rf.get("rate"),
            baseline_window=rf.get("baseline_window"),
            lambda_max=bo.get("lambda_max"), eps=bo.get("eps"), verify_crossing=bo.get("verify"),
            detection_limit=zl.get("default"), part_detection_limits=zl.get("parts"),
            top_k=at.get("top_k"), other_top_k=ot.get("top_k"), growth_ratio=ot.get("growth_ratio"),
            growth_window=ot.get("window"), churn_window=dd.get("churn_window"),
        )
        kw = {k: v for k, v in kw.items() if v is not None}
        if "level_multipliers" in kw:
            kw["level_multipliers"] = tuple(kw["level_multipliers"])
        return cls(groups=groups, basis=basis, safe_set=safe, lineage=dict(d.get("lineage", {})), **kw)

    def to_dict(self) -> dict:
        return {
            "groups": list(self.groups),
            "basis": {"sbp": self.basis.sbp.astype(int).tolist(), "names": list(self.basis.names)},
            "lineage": dict(self.lineage),
            "constraints": [c.to_dict() for c in self.safe_set],
            "include_share_barriers": self.safe_set.include_share_barriers,
            "thresholds": {
                "c_min": self.c_min, "m_max": self.m_max, "levels": list(self.level_multipliers),
                "lambda_alert": self.lambda_alert, "trend_alpha": self.trend_alpha,
                "trend_window": self.trend_window, "mad_floor": self.mad_floor,
            },
            "smoothing": {
                "lambda": self.ewma_lambda, "clip": self.clip, "mad_window": self.mad_window,
                "warmup": self.smoothing_warmup, "direction_floor": self.direction_floor,
            },
            "reference": {
                "warmup": self.reference_warmup, "rate": self.reference_rate,
                "baseline_window": self.baseline_window,
            },
            "boundary": {"lambda_max": self.lambda_max, "eps": self.eps, "verify": self.verify_crossing},
            "zero_limits": {"default": self.detection_limit, "parts": dict(self.part_detection_limits)},
            "attribution": {"top_k": self.top_k},
            "other": {"top_k": self.other_top_k, "growth_ratio": self.growth_ratio, "window": self.growth_window},
            "drilldown": {"churn_window": self.churn_window},
        }

    def delta_for(self, parts: Sequence[str]) -> np.ndarray:
        limits = [self.part_detection_limits.get(p, self.detection_limit) for p in parts]
        return replacement_delta(np.array(limits, dtype=float))


@dataclass(frozen=True)
class Observation:
    t: int
    parts: Mapping
    confidence: float = 1.0
    freeze: bool = False

    def to_dict(self) -> dict:
        return {"t": self.t, "parts": dict(self.parts), "confidence": self.confidence, "freeze": self.freeze}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Observation":
        return cls(
            t=int(d["t"]),
            parts={str(k): float(v) for k, v in dict(d["parts"]).items()},
            confidence=float(d.get("confidence", 1.0)),
            freeze=bool(d.get("freeze", False)),
        )


@dataclass(frozen=True)
class Level:
    level: str
    score: float | None
    ready: bool


def warning_level(
    d: float | None,
    baseline_mad: float | None,
    multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
    center: float = 0.0,
) -> Level:
    """Quantise a distance into none/watch/warn/critical.

    The score is ``(d - center) / baseline_mad``; levels start at the given
    MAD multiples.  Without a baseline the level is ``none`` and not ready.
    """
    if d is None or baseline_mad is None:
        return Level("none", None, False)
    if baseline_mad <= 0:
        raise DomainError("baseline MAD must be positive")
    score = (d - center) / baseline_mad
    level = "none"
    for name, m in zip(LEVELS[1:], multipliers):
        if score >= m:
            level = name
    return Level(level, float(score), True)


@dataclass(frozen=True)
class DriftReport:
    t: int
    epoch: int
    groups: tuple
    composition: tuple
    balances: tuple
    distance: float | None
    score: float | None
    level: str
    trend: str
    warning_ready: bool
    imminence: Mapping
    drift_magnitude: float
    drift_direction: tuple | None
    attribution: tuple
    no_drift: bool
    health: Mapping
    violations: tuple
    barrier_index: float
    log_barrier: float
    gated: str | None
    alerts: tuple
    reference_mode: str

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "epoch": self.epoch,
            "state": {
                "groups": list(self.groups),
                "composition": list(self.composition),
                "balances": list(self.balances),
            },
            "warning": {
                "distance": self.distance,
                "score": self.score,
                "level": self.level,
                "trend": self.trend,
                "ready": self.warning_ready,
            },
            "imminence": dict(self.imminence),
            "drift": {
                "magnitude": self.drift_magnitude,
                "direction": None if self.drift_direction is None else list(self.drift_direction),
            },
            "attribution": [{"balance": n, "value": v} for n, v in self.attribution],
            "no_drift": self.no_drift,
            "health": dict(self.health),
            "violations": [{"name": n, "margin": m} for n, m in self.violations],
            "barrier": {"barrier_index": self.barrier_index, "log_barrier": self.log_barrier},
            "gated": self.gated,
            "alerts": list(self.alerts),
            "reference_mode": self.reference_mode,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DriftReport":
        st, w, dr_ = d["state"], d["warning"], d["drift"]
        lb = d["barrier"]["log_barrier"]
        imm = dict(d["imminence"])
        for key in ("lambda", "steps"):
            if key in imm and imm[key] is None and imm.get("outcome") == bd.INWARD:
                imm[key] = math.inf
        health = dict(d["health"])
        return cls(
            t=int(d["t"]),
            epoch=int(d["epoch"]),
            groups=tuple(st["groups"]),
            composition=tuple(st["composition"]),
            balances=tuple(st["balances"]),
            distance=w["distance"],
            score=w["score"],
            level=w["level"],
            trend=w["trend"],
            warning_ready=bool(w["ready"]),
            imminence=imm,
            drift_magnitude=dr_["magnitude"],
            drift_direction=None if dr_["direction"] is None else tuple(dr_["direction"]),
            attribution=tuple((a["balance"], a["value"]) for a in d["attribution"]),
            no_drift=bool(d["no_drift"]),
            health=health,
            violations=tuple((v["name"], v["margin"]) for v in d["violations"]),
            barrier_index=d["barrier"]["barrier_index"],
            log_barrier=math.inf if lb is None else lb,
            gated=d["gated"],
            alerts=tuple(d["alerts"]),
            reference_mode=d["reference_mode"],
        )

    def has_alert(self, kind: str | None = None) -> bool:
        return bool(self.alerts) if kind is None else kind in self.alerts


class Monitor:
    """Stateful single-stream monitor."""

    def __init__(self, config: MonitorConfig):
        self.config = config
        self.map = lg.LineageMap(config.groups, dict(config.lineage))
        dim = config.basis.dim
        self.estimate = dr.new_estimate(dim)
        self.reference = bd.new_reference(dim, config.reference_warmup, config.reference_rate, config.basis.id)
        self.last_t = None
        self.last_z = None
        self.last_leaf = None
        self._baseline = []
        self.baseline_center = None
        self.baseline_mad = None
        self._distances = deque(maxlen=config.trend_window)
        self._other_history = {}
        self._last_churn = {}

    def reset_reference(self):
        """Operator re-baselining: relearn the reference and the warning baseline."""
        self.reference = bd.reset_reference(self.reference)
        self._baseline = []
        self.baseline_center = self.baseline_mad = None
        self._distances.clear()

    def _apply_events(self, events, t):
        for ev in events:
            groups_before = {p: self.map.assignment.get(p) for p in ev.touched()}
            self.map = lg.apply_event(self.map, ev)
            touched = {g for g in groups_before.values() if g} | {
                self.map.assignment[p] for p in ev.touched() if p in self.map.assignment
            }
            for g in touched:
                self._last_churn[g] = t

    def _leaf(self, obs):
        cfg = self.config
        parts = list(obs.parts)
        if len(parts) < 2:
            raise DomainError(f"t={obs.t}: an observation needs at least 2 parts")
        raw = np.array([obs.parts[p] for p in parts], dtype=float)
        if np.any(~np.isfinite(raw)) or np.any(raw < 0):
            bad = [p for p, v in zip(parts, raw) if not (np.isfinite(v) and v >= 0)]
            raise DomainError(f"t={obs.t}: negative or non-finite value for part(s) {bad}")
        for p in parts:
            self.map.group_of(p)
        return closure(zero_replace(raw, cfg.delta_for(parts)), parts=parts)

    def step(self, obs: Observation, events: Sequence[lg.LineageEvent] = ()) -> DriftReport:
        cfg = self.config
        if self.last_t is not None and obs.t <= self.last_t:
            raise SequencingError(f"timestep {obs.t} is not after {self.last_t}")
        self._apply_events(events, obs.t)
        x_leaf = self._leaf(obs)
        floor = float(replacement_delta(cfg.detection_limit))
        am = lg.amalgamate(x_leaf, self.map, floor)
        x = am.composition
        health = lg.model_health(x, obs.confidence, cfg.c_min, cfg.m_max, am.empty_groups)
        others = lg.other_contributors(
            x_leaf, self.map, cfg.other_top_k, self._other_history, cfg.growth_ratio, cfg.growth_window
        )
        z = ilr(x, cfg.basis)
        if self.last_z is not None:
            self.estimate = dr.update_estimate(
                self.estimate, z.coords - self.last_z.coords, cfg.ewma_lambda, cfg.clip,
                window=cfg.mad_window, warmup=cfg.smoothing_warmup, floor=cfg.direction_floor,
            )
        gated = "+".join(health.reasons) if health.degraded else None

        # distance diagnostics use the reference as it stood before this sample
        distance = None
        attribution = dr.Attribution(())
        if self.reference.ready:
            diff = z.coords - self.reference.z_star
            distance = float(np.linalg.norm(diff))
            attribution = dr.attribute(diff, cfg.basis, cfg.top_k)
        lvl = warning_level(distance, self.baseline_mad, cfg.level_multipliers, self.baseline_center or 0.0)
        trend = "flat"
        if distance is not None:
            self._distances.append(distance)
            if len(self._distances) >= MIN_LENGTH:
                trend = trend_test(list(self._distances), cfg.trend_alpha).direction
            if self.baseline_mad is None and not health.degraded:
                self._baseline.append(distance)
                if len(self._baseline) >= cfg.baseline_window:
                    b = np.array(self._baseline)
                    self.baseline_center = float(np.median(b))
                    self.baseline_mad = max(float(np.median(np.abs(b - self.baseline_center))), cfg.mad_floor)

        hs = bd.constraint_values(cfg.safe_set, x)
        violations = tuple((n, h) for n, h in hs.items() if h >= 0)
        lb = bd.log_barrier(x, cfg.safe_set)
        imminence = self._imminence(z, violations)

        level = lvl.level
        alerts = []
        if violations:
            alerts.append("violation")
        if imminence["outcome"] == bd.CROSSING and imminence["steps"] <= cfg.lambda_alert:
            alerts.append("imminence")
        if lvl.ready and LEVELS.index(level) >= LEVELS.index("warn"):
            alerts.append("distance")
        if gated:
            alerts = []
            if LEVELS.index(level) > LEVELS.index("watch"):
                level = "watch"

        self.reference = bd.reference_update(self.reference, z, obs.freeze, health)
        for p, v in zip(x_leaf.parts, x_leaf.values):
            if self.map.group_of(p) == lg.OTHER:
                self._other_history.setdefault(p, deque(maxlen=cfg.growth_window)).append(float(v))
        self.last_t, self.last_z, self.last_leaf = obs.t, z, x_leaf

        health_d = health.to_dict()
        health_d["other_top"] = [{"part": c.part, "share": c.share, "growing": c.growing} for c in others]
        est = self.estimate
        return DriftReport(
            t=obs.t,
            epoch=self.map.epoch,
            groups=tuple(cfg.groups),
            composition=tuple(float(v) for v in x.values),
            balances=tuple(float(v) for v in z.coords),
            distance=distance,
            score=lvl.score,
            level=level,
            trend=trend,
            warning_ready=lvl.ready,
            imminence=imminence,
            drift_magnitude=float(est.magnitude),
            drift_direction=None if est.direction is None else tuple(float(v) for v in est.direction),
            attribution=attribution.ranking,
            no_drift=attribution.no_drift,
            health=health_d,
            violations=violations,
            barrier_index=bd.barrier_index(x),
            log_barrier=lb.value,
            gated=gated,
            alerts=tuple(alerts),
            reference_mode=self.reference.mode,
        )

    def _imminence(self, z, violations):
        cfg = self.config
        blank = {"outcome": UNDEFINED, "lambda": None, "steps": None, "constraint": None, "lambda_bisection": None}
        if violations:
            return dict(blank, outcome=VIOLATED, constraint=violations[0][0])
        est = self.estimate
        if est.direction is None:
            return blank
        res = bd.step_to_boundary(
            z, np.asarray(est.direction), cfg.safe_set, cfg.basis, cfg.lambda_max, cfg.eps, cfg.verify_crossing
        )
        steps = res.lam / est.magnitude if res.outcome != bd.INWARD else math.inf
        return {
            "outcome": res.outcome,
            "lambda": res.lam,
            "steps": steps,
            "constraint": res.constraint,
            "lambda_bisection": res.lam_bisection,
        }

    def drilldown(self, group: str, within_basis: ContrastBasis, reference: Composition | None = None):
        if self.last_leaf is None:
            raise NotApplicableError("no observation has been processed yet")
        return drilldown(
            self.last_leaf, group, self.map, within_basis, reference,
            last_churn=self._last_churn.get(group), t=self.last_t,
            churn_window=self.config.churn_window, top_k=self.config.top_k,
        )


@dataclass(frozen=True)
class DrilldownReport:
    group: str
    composition: Composition
    balances: np.ndarray
    distance: float | None
    attribution: tuple


def drilldown(
    x_leaf: Composition,
    group: str,
    map_: lg.LineageMap,
    within_basis: ContrastBasis,
    reference: Composition | None = None,
    *,
    last_churn: int | None = None,
    t: int | None = None,
    churn_window: int = 8,
    top_k: int = 3,
) -> DrilldownReport:
    """Re-close the members of one canonical group and analyse them alone.

    ``reference`` is a composition over the same members; without it only
    the re-closed subcomposition and its balances are returned.
    """
    members = [p for p in x_leaf.parts if map_.group_of(p) == group]
    if len(members) < 2:
        raise NotApplicableError(f"group {group!r} has {len(members)} member part(s); drill-down needs 2")
    if last_churn is not None and t is not None and t - last_churn < churn_window:
        raise RefusedError(
            f"group {group!r} changed at t={last_churn}; wait {churn_window} steps after churn before drilling down"
        )
    if set(members) != set(within_basis.parts):
        raise AlignmentError(f"within-group basis parts {list(within_basis.parts)} do not match members {members}")
    sub = closure([x_leaf[p] for p in within_basis.parts], parts=within_basis.parts)
    zb = ilr(sub, within_basis).coords
    distance, ranking = None, ()
    if reference is not None:
        diff = zb - ilr(reference, within_basis).coords
        distance = float(np.linalg.norm(diff))
        ranking = dr.attribute(diff, within_basis, top_k).ranking
    return DrilldownReport(group, sub, zb, distance, ranking)
