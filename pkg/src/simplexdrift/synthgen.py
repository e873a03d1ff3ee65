"""Labelled synthetic drift traces.

Group-level state follows a linear model in ilr space,
``z[t+1] = z[t] + beta * u + sigma * eps[t]`` with piecewise-constant drift
``u`` per segment and standard Gaussian ``eps``.  Group mass is then split
among leaf parts according to per-group templates, and churn events
(split/merge/rename/add/remove) reshape those templates over time without
touching group totals.

Ground-truth boundary crossings are labelled on the noiseless trajectory;
crossings of the noisy path are recorded separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .boundary import LogContrastConstraint, SafeSet
from .coda import ContrastBasis, ilr_inv, sbp_to_basis
from .errors import LineageError, SpecError
from .lineage import OTHER, CanonicalGroups, LineageEvent, LineageMap, apply_event
from .monitor import Observation
from .records import normalize, write_json, write_jsonl

FRACTION_TOL = 1e-12
DEFAULT_ADD_FRACTION = 0.1


@dataclass(frozen=True)
class Segment:
    length: int
    drift: tuple
    beta: float = 0.0
    sigma: float = 0.0

    @property
    def stationary(self) -> bool:
        return self.beta == 0 or not np.any(np.asarray(self.drift))


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    groups: CanonicalGroups
    basis: ContrastBasis
    segments: tuple
    seed: int
    z0: tuple = ()
    leaves: Mapping = field(default_factory=dict)
    churn: tuple = ()
    safe_set: SafeSet = field(default_factory=SafeSet)
    confidence: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.seed is None:
            raise SpecError("a seed is mandatory")
        if self.basis.parts != self.groups.groups:
            raise SpecError("basis must be defined over the canonical groups")
        dim = self.basis.dim
        z0 = tuple(float(v) for v in self.z0) if len(self.z0) else (0.0,) * dim
        if len(z0) != dim:
            raise SpecError(f"z0 needs {dim} coordinates")
        object.__setattr__(self, "z0", z0)
        if not self.segments:
            raise SpecError("at least one segment is required")
        for i, s in enumerate(self.segments):
            if s.length < 1:
                raise SpecError(f"segment {i}: length must be at least 1")
            if s.sigma < 0:
                raise SpecError(f"segment {i}: noise sigma must be non-negative")
            if len(s.drift) != dim:
                raise SpecError(f"segment {i}: drift needs {dim} coordinates")
        leaves = {g: dict(self.leaves.get(g, {g: 1.0})) for g in self.groups}
        seen = set()
        for g, members in leaves.items():
            if not members:
                raise SpecError(f"group {g!r} has no leaf parts")
            _check_fractions(members.values(), f"leaf template of group {g!r}")
            dupes = seen & set(members)
            if dupes:
                raise SpecError(f"leaf ids used in more than one group: {sorted(dupes)}")
            seen |= set(members)
        object.__setattr__(self, "leaves", leaves)
        for c in self.safe_set:
            missing = [p for p in c.coeffs if p not in self.groups]
            if missing:
                raise SpecError(f"constraint {c.name!r} references unknown group(s) {missing}")
        object.__setattr__(self, "churn", tuple(sorted(self.churn, key=lambda e: e.at)))

    @property
    def n_steps(self) -> int:
        return sum(s.length for s in self.segments)

    def lineage_assignment(self) -> dict:
        return {leaf: g for g, members in self.leaves.items() for leaf in members}

    def monitor_config(self) -> dict:
        return {
            "groups": list(self.groups),
            "basis": {"sbp": self.basis.sbp.astype(int).tolist(), "names": list(self.basis.names)},
            "lineage": self.lineage_assignment(),
            "constraints": [c.to_dict() for c in self.safe_set],
            "include_share_barriers": self.safe_set.include_share_barriers,
        }

    @classmethod
    def from_dict(cls, d: Mapping, seed: int | None = None) -> "ScenarioSpec":
        try:
            groups = CanonicalGroups(tuple(d["groups"]))
            b = d["basis"]
            basis = sbp_to_basis(b["sbp"], names=b.get("names"), parts=groups.groups)
            segments = tuple(
                Segment(int(s["length"]), tuple(float(v) for v in s.get("drift", [0.0] * basis.dim)),
                        float(s.get("beta", 0.0)), float(s.get("sigma", 0.0)))
                for s in d["segments"]
            )
            constraints = tuple(LogContrastConstraint.from_dict(c) for c in d.get("constraints", ()))
            churn = tuple(LineageEvent.from_dict(e) for e in d.get("churn", ()))
            return cls(
                groups=groups,
                basis=basis,
                segments=segments,
                seed=int(d["seed"] if seed is None else seed),
                z0=tuple(d.get("z0", ())),
                leaves={g: dict(m) for g, m in d.get("leaves", {}).items()},
                churn=churn,
                safe_set=SafeSet(constraints, bool(d.get("include_share_barriers", True))),
                confidence=float(d.get("confidence", 1.0)),
                scale=float(d.get("scale", 1.0)),
            )
        except KeyError as exc:
            raise SpecError(f"scenario spec is missing {exc}") from None

    def to_dict(self) -> dict:
        return {
            "groups": list(self.groups),
            "basis": {"sbp": self.basis.sbp.astype(int).tolist(), "names": list(self.basis.names)},
            "segments": [
                {"length": s.length, "drift": list(s.drift), "beta": s.beta, "sigma": s.sigma} for s in self.segments
            ],
            "seed": self.seed,
            "z0": list(self.z0),
            "leaves": {g: dict(m) for g, m in self.leaves.items()},
            "churn": [e.to_dict() for e in self.churn],
            "constraints": [c.to_dict() for c in self.safe_set],
            "include_share_barriers": self.safe_set.include_share_barriers,
            "confidence": self.confidence,
            "scale": self.scale,
        }


def _check_fractions(fracs, what):
    fracs = [float(f) for f in fracs]
    if any(f <= 0 for f in fracs):
        raise SpecError(f"{what}: mass fractions must be positive")
    if abs(sum(fracs) - 1.0) > FRACTION_TOL:
        raise SpecError(f"{what}: mass fractions sum to {sum(fracs):.15g}, not 1")


@dataclass(frozen=True)
class BoundaryLabels:
    noiseless: Mapping
    noisy: Mapping
    degenerate: tuple = ()

    def to_dict(self) -> dict:
        return {"noiseless": dict(self.noiseless), "noisy": dict(self.noisy), "degenerate": list(self.degenerate)}


@dataclass(frozen=True, eq=False)
class LabeledTrace:
    spec: ScenarioSpec
    z: np.ndarray
    z_noiseless: np.ndarray
    observations: tuple
    events: tuple
    labels: BoundaryLabels
    leaf_churn: tuple = ()

    @property
    def n_steps(self) -> int:
        return self.z.shape[0]

    def group_compositions(self, noiseless: bool = False):
        zs = self.z_noiseless if noiseless else self.z
        return [ilr_inv(z, self.spec.basis) for z in zs]

    def segments(self) -> list[dict]:
        out, start = [], 0
        for s in self.spec.segments:
            out.append({
                "start": start, "end": start + s.length, "drift": list(s.drift), "beta": s.beta,
                "sigma": s.sigma, "stationary": s.stationary,
            })
            start += s.length
        return out

    def truth(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "seed": self.spec.seed,
            "groups": list(self.spec.groups),
            "balance_names": list(self.spec.basis.names),
            "segments": self.segments(),
            "crossings": self.labels.to_dict(),
        }

    def events_at(self) -> dict:
        by_t = {}
        for ev in self.events:
            by_t.setdefault(ev.at, []).append(ev)
        return by_t


def _simulate(spec: ScenarioSpec):
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n, dim = spec.n_steps, spec.basis.dim
    eps = rng.standard_normal((max(n - 1, 0), dim))
    z = np.empty((n, dim))
    zn = np.empty((n, dim))
    z[0] = zn[0] = spec.z0
    seg_of_step = np.repeat(np.arange(len(spec.segments)), [s.length for s in spec.segments])
    for t in range(n - 1):
        s = spec.segments[seg_of_step[t]]
        step = s.beta * np.asarray(s.drift)
        zn[t + 1] = zn[t] + step
        z[t + 1] = z[t] + step + s.sigma * eps[t]
    return z, zn


def _apply_template_event(leaves, ev: LineageEvent):
    """Mutate ``leaves`` (group -> {leaf: fraction}) for one churn event."""
    a = ev.args

    def group_of(part):
        for g, members in leaves.items():
            if part in members:
                return g
        raise SpecError(f"churn event at t={ev.at} references unknown leaf {part!r}")

    if ev.kind == "rename":
        g = group_of(a["old"])
        leaves[g] = {(a["new"] if k == a["old"] else k): v for k, v in leaves[g].items()}
    elif ev.kind == "split":
        g = group_of(a["parent"])
        children = list(a["children"])
        fracs = list(a.get("fractions") or [1.0 / len(children)] * len(children))
        if len(fracs) != len(children):
            raise SpecError(f"split at t={ev.at}: {len(fracs)} fractions for {len(children)} children")
        _check_fractions(fracs, f"split of {a['parent']!r} at t={ev.at}")
        members = {}
        for k, v in leaves[g].items():
            if k == a["parent"]:
                members.update({c: v * f for c, f in zip(children, fracs)})
            else:
                members[k] = v
        leaves[g] = members
    elif ev.kind == "merge":
        parents = list(a["parents"])
        g = group_of(parents[0])
        if any(group_of(p) != g for p in parents):
            raise SpecError(f"merge at t={ev.at} spans groups")
        total = sum(leaves[g][p] for p in parents)
        members = {k: v for k, v in leaves[g].items() if k not in parents}
        members[a["new"]] = total
        leaves[g] = members
    elif ev.kind == "add":
        g = a.get("group") or OTHER
        if g not in leaves:
            raise SpecError(f"add at t={ev.at} targets unknown group {g!r}")
        phi = float(a.get("fraction", DEFAULT_ADD_FRACTION))
        if not 0 < phi < 1:
            raise SpecError(f"add at t={ev.at}: fraction must lie in (0, 1)")
        if leaves[g]:
            leaves[g] = {k: v * (1 - phi) for k, v in leaves[g].items()}
            leaves[g][a["part"]] = phi
        else:
            leaves[g] = {a["part"]: 1.0}
    elif ev.kind == "remove":
        g = group_of(a["part"])
        members = {k: v for k, v in leaves[g].items() if k != a["part"]}
        total = sum(members.values())
        leaves[g] = {k: v / total for k, v in members.items()} if members else {}


def _leafify(spec: ScenarioSpec, z, events: Sequence[LineageEvent]):
    leaves = {g: dict(m) for g, m in spec.leaves.items()}
    lmap = LineageMap(spec.groups, spec.lineage_assignment())
    by_t = {}
    for ev in events:
        if not 0 <= ev.at < z.shape[0]:
            raise SpecError(f"churn event at t={ev.at} is outside the trace")
        by_t.setdefault(ev.at, []).append(ev)
    observations = []
    for t in range(z.shape[0]):
        for ev in by_t.get(t, ()):
            try:
                lmap = apply_event(lmap, ev)
            except LineageError as exc:
                raise SpecError(f"churn event at t={ev.at}: {exc}") from None
            _apply_template_event(leaves, ev)
        x = ilr_inv(z[t], spec.basis)
        parts = {}
        for g, share in zip(spec.groups, x.values):
            for leaf, frac in leaves[g].items():
                parts[leaf] = float(spec.scale * share * frac)
        observations.append(Observation(t, parts, spec.confidence))
    return tuple(observations)


def label_boundaries(trace: LabeledTrace, omega: SafeSet | None = None) -> BoundaryLabels:
    """First timestep with ``h >= 0`` per constraint.

    A constraint already violated at ``t = 0`` is labelled 0 and listed as
    degenerate.
    """
    omega = trace.spec.safe_set if omega is None else omega
    basis = trace.spec.basis
    for c in omega:
        missing = [p for p in c.coeffs if p not in basis.parts]
        if missing:
            raise SpecError(f"constraint {c.name!r} references unknown group(s) {missing}")

    def first_crossings(zs):
        out = {}
        for c in omega:
            a = c.vector(basis.parts)
            # h is linear in z: a . V^T z - b
            h = zs @ (basis.contrast @ a) - c.threshold
            hit = np.flatnonzero(h >= 0)
            if hit.size:
                out[c.name] = int(hit[0])
        return out

    noiseless = first_crossings(trace.z_noiseless)
    noisy = first_crossings(trace.z)
    degenerate = tuple(name for name, t in noiseless.items() if t == 0)
    return BoundaryLabels(noiseless, noisy, degenerate)


def generate(spec: ScenarioSpec) -> LabeledTrace:
    z, zn = _simulate(spec)
    observations = _leafify(spec, z, spec.churn)
    trace = LabeledTrace(spec, z, zn, observations, spec.churn, BoundaryLabels({}, {}))
    return replace(trace, labels=label_boundaries(trace))


def inject_churn(trace: LabeledTrace, events: Sequence[LineageEvent]) -> LabeledTrace:
    """Add churn events to an existing trace; group-level truth is untouched."""
    merged = tuple(sorted((*trace.events, *events), key=lambda e: e.at))
    observations = _leafify(trace.spec, trace.z, merged)
    return replace(trace, observations=observations, events=merged)


def random_churn(spec: ScenarioSpec, n_events: int, seed: int, start: int = 1, within_groups=None):
    """Random within-group split/merge/rename events for stress tests."""
    rng = np.random.Generator(np.random.PCG64(seed))
    leaves = {g: dict(m) for g, m in spec.leaves.items()}
    groups = [g for g in (within_groups or spec.groups)]
    times = np.sort(rng.choice(np.arange(start, spec.n_steps), size=n_events, replace=False))
    events, counter = [], 0
    for t in times:
        g = groups[rng.integers(len(groups))]
        members = list(leaves[g])
        options = ["split", "rename"] + (["merge"] if len(members) >= 2 else [])
        kind = options[rng.integers(len(options))]
        counter += 1
        if kind == "split":
            parent = members[rng.integers(len(members))]
            f = float(rng.uniform(0.2, 0.8))
            args = {"parent": parent, "children": [f"{g}-s{counter}a", f"{g}-s{counter}b"], "fractions": [f, 1 - f]}
        elif kind == "merge":
            pair = rng.choice(len(members), size=2, replace=False)
            args = {"parents": [members[i] for i in sorted(pair)], "new": f"{g}-m{counter}"}
        else:
            old = members[rng.integers(len(members))]
            args = {"old": old, "new": f"{g}-r{counter}"}
        ev = LineageEvent(kind, args, int(t))
        _apply_template_event(leaves, ev)
        events.append(ev)
    return events


# -- presets ---------------------------------------------------------------

FRO_GROUPS = ("F", "R", "O", OTHER)
FRO_SBP = [[1, -1, 0, 0], [1, 1, -1, 0], [1, 1, 1, -1]]
FRO_NAMES = ["F vs R", "F,R vs O", "F,R,O vs other"]
FRO_LEAVES = {"F": {"f1": 0.5, "f2": 0.5}, "R": {"r1": 1.0}, "O": {"o1": 0.6, "o2": 0.4}, OTHER: {"x1": 1.0}}
FR_CAP = {"name": "F/R<=1.5", "coeffs": {"F": 1.0, "R": -1.0}, "threshold": float(np.log(1.5))}


def other_share_z(share: float) -> float:
    """Third-balance value putting ``share`` in "other" with F = R = O."""
    a = (1 - share) / 3
    return float(np.sqrt(3 / 4) * np.log(a / share))


def _fro_spec(segments, seed, churn=(), z0=None):
    # rounded to the file precision so a written spec regenerates the same trace
    return normalize({
        "groups": list(FRO_GROUPS),
        "basis": {"sbp": FRO_SBP, "names": FRO_NAMES},
        "segments": segments,
        "seed": seed,
        "z0": z0 if z0 is not None else [0.0, 0.0, other_share_z(0.05)],
        "leaves": FRO_LEAVES,
        "churn": list(churn),
        "constraints": [FR_CAP],
    })


def preset(name: str, seed: int = 0) -> dict:
    """Named scenario specs (as dicts, ready for :meth:`ScenarioSpec.from_dict`)."""
    e1 = [1.0, 0.0, 0.0]
    if name == "ramp":
        return _fro_spec([{"length": 60, "drift": e1, "beta": 0.01, "sigma": 0.0}], seed)
    if name == "stationary":
        return _fro_spec([{"length": 200, "drift": [0, 0, 0], "beta": 0.0, "sigma": 0.02}], seed)
    if name == "shock":
        return _fro_spec(
            [
                {"length": 100, "drift": [0, 0, 0], "beta": 0.0, "sigma": 0.02},
                {"length": 20, "drift": [0.0, 1.0, 0.0], "beta": 0.06, "sigma": 0.02},
            ],
            seed,
        )
    if name == "ramp-noisy":
        return _fro_spec(
            [
                {"length": 60, "drift": [0, 0, 0], "beta": 0.0, "sigma": 0.002},
                {"length": 60, "drift": e1, "beta": 0.01, "sigma": 0.002},
            ],
            seed,
        )
    if name == "single-balance":
        return _fro_spec(
            [
                {"length": 60, "drift": [0, 0, 0], "beta": 0.0, "sigma": 0.002},
                {"length": 40, "drift": [0.0, 1.0, 0.0], "beta": 0.02, "sigma": 0.002},
            ],
            seed,
        )
    raise SpecError(f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("ramp", "stationary", "shock", "ramp-noisy", "single-balance")


def write_trace(trace: LabeledTrace, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "observations": out / "observations.jsonl",
        "lineage": out / "lineage.jsonl",
        "truth": out / "truth.json",
        "config": out / "config.json",
        "spec": out / "spec.json",
    }
    write_jsonl(paths["observations"], (o.to_dict() for o in trace.observations))
    write_jsonl(paths["lineage"], (e.to_dict() for e in trace.events))
    write_json(paths["truth"], trace.truth())
    write_json(paths["config"], trace.spec.monitor_config())
    write_json(paths["spec"], trace.spec.to_dict())
    return paths
