"""Part inventory, lineage map and amalgamation to canonical groups.

Leaf parts come and go (renames, splits, merges, short-lived newcomers).  The
monitor never looks at leaf parts directly: it amalgamates them into a small,
fixed list of canonical groups whose last entry is always ``"other"``.  As
long as splits and merges stay inside a group the amalgamated composition is
unchanged by churn.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .coda import Composition, closure, replacement_delta, zero_replace
from .errors import (
    AlignmentError,
    ConfigurationError,
    DomainError,
    LineageError,
    LineageViolationError,
    StructureError,
    UnknownPartError,
)

OTHER = "other"
EVENT_KINDS = ("rename", "split", "merge", "add", "remove")

DEFAULT_C_MIN = 0.8
DEFAULT_M_MAX = 0.10
DEFAULT_GROWTH_RATIO = 2.0
DEFAULT_GROWTH_WINDOW = 8


@dataclass(frozen=True)
class CanonicalGroups:
    groups: tuple

    def __post_init__(self):
        groups = tuple(self.groups)
        if not 3 <= len(groups) <= 16:
            raise StructureError(f"need between 3 and 16 canonical groups, got {len(groups)}")
        if groups.count(OTHER) != 1 or groups[-1] != OTHER:
            raise StructureError(f'the last canonical group must be "{OTHER}" and appear exactly once')
        if len(set(groups)) != len(groups):
            raise StructureError("duplicate canonical group ids")
        object.__setattr__(self, "groups", groups)

    @property
    def K(self) -> int:
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    def __len__(self):
        return len(self.groups)

    def __contains__(self, g):
        return g in self.groups

    def index(self, g) -> int:
        return self.groups.index(g)


@dataclass(frozen=True)
class LineageEvent:
    """One inventory change.

    ``args`` per kind::

        rename  {"old": id, "new": id}
        split   {"parent": id, "children": [ids], "fractions": [..]?}
        merge   {"parents": [ids], "new": id}
        add     {"part": id, "group": gid?, "fraction": f?}
        remove  {"part": id}

    ``fractions``/``fraction`` are generator hints and are ignored here.
    """

    kind: str
    args: Mapping
    at: int = 0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise LineageError(f"unknown lineage event kind {self.kind!r}")
        required = {
            "rename": ("old", "new"),
            "split": ("parent", "children"),
            "merge": ("parents", "new"),
            "add": ("part",),
            "remove": ("part",),
        }[self.kind]
        missing = [k for k in required if k not in self.args]
        if missing:
            raise LineageError(f"{self.kind} event missing argument(s) {missing}")
        object.__setattr__(self, "args", dict(self.args))

    def to_dict(self) -> dict:
        return {"at": int(self.at), "kind": self.kind, "args": dict(self.args)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LineageEvent":
        return cls(kind=d["kind"], args=d.get("args", {}), at=int(d.get("at", 0)))

    def touched(self) -> tuple:
        a = self.args
        if self.kind == "rename":
            return (a["old"], a["new"])
        if self.kind == "split":
            return (a["parent"], *a["children"])
        if self.kind == "merge":
            return (*a["parents"], a["new"])
        return (a["part"],)


@dataclass(frozen=True)
class LineageMap:
    """Assignment of current part ids to canonical groups.

    Parts absent from ``assignment`` are implicitly in ``"other"``.  Ids that
    have been renamed, split, merged away or removed are kept in ``retired``
    so a stale id showing up in telemetry is caught instead of silently routed
    to ``"other"``.
    """

    groups: CanonicalGroups
    assignment: Mapping = field(default_factory=dict)
    epoch: int = 0
    retired: frozenset = frozenset()

    def __post_init__(self):
        assignment = dict(self.assignment)
        unknown = {g for g in assignment.values() if g not in self.groups}
        if unknown:
            raise LineageError(f"assignment references unknown group(s) {sorted(unknown)}")
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "retired", frozenset(self.retired))

    def group_of(self, part) -> str:
        if part in self.retired and part not in self.assignment:
            raise LineageError(f"part {part!r} was retired by an earlier lineage event")
        return self.assignment.get(part, OTHER)

    def members(self, group) -> list:
        return [p for p, g in self.assignment.items() if g == group]


def identity_map(parts: Sequence[str], groups: CanonicalGroups) -> LineageMap:
    return LineageMap(groups, {p: p for p in parts if p in groups})


def _require(map_, part):
    if part not in map_.assignment:
        raise UnknownPartError(f"lineage event references unknown part {part!r}")


def _require_fresh(map_, part):
    if part in map_.assignment:
        raise LineageError(f"part id {part!r} is already in use")


def apply_event(map_: LineageMap, event: LineageEvent) -> LineageMap:
    a = event.args
    assignment = dict(map_.assignment)
    retired = set(map_.retired)
    if event.kind == "rename":
        _require(map_, a["old"])
        _require_fresh(map_, a["new"])
        assignment[a["new"]] = assignment.pop(a["old"])
        retired.add(a["old"])
    elif event.kind == "split":
        _require(map_, a["parent"])
        children = list(a["children"])
        if not children:
            raise LineageError("split needs at least one child")
        if len(set(children)) != len(children):
            raise LineageError("split children must be distinct")
        for c in children:
            if c != a["parent"]:
                _require_fresh(map_, c)
        group = assignment.pop(a["parent"])
        retired.add(a["parent"])
        for c in children:
            assignment[c] = group
            retired.discard(c)
    elif event.kind == "merge":
        parents = list(a["parents"])
        if not parents:
            raise LineageError("merge needs at least one parent")
        for p in parents:
            _require(map_, p)
        groups = {assignment[p] for p in parents}
        if len(groups) != 1:
            raise LineageViolationError(
                f"merge of {parents} spans groups {sorted(groups)}; re-group the parts first"
            )
        if a["new"] not in parents:
            _require_fresh(map_, a["new"])
        for p in parents:
            del assignment[p]
            retired.add(p)
        assignment[a["new"]] = groups.pop()
        retired.discard(a["new"])
    elif event.kind == "add":
        _require_fresh(map_, a["part"])
        group = a.get("group") or OTHER
        if group not in map_.groups:
            raise LineageError(f"add event targets unknown group {group!r}")
        assignment[a["part"]] = group
        retired.discard(a["part"])
    elif event.kind == "remove":
        _require(map_, a["part"])
        del assignment[a["part"]]
        retired.add(a["part"])
    return LineageMap(map_.groups, assignment, map_.epoch + 1, frozenset(retired))


def apply_events(map_: LineageMap, events: Sequence[LineageEvent]) -> LineageMap:
    for ev in events:
        map_ = apply_event(map_, ev)
    return map_


@dataclass(frozen=True)
class Amalgamation:
    composition: Composition
    empty_groups: tuple = ()


def group_sums(parts: Sequence[str], values, map_: LineageMap) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    sums = np.zeros(map_.groups.K)
    for p, v in zip(parts, values):
        sums[map_.groups.index(map_.group_of(p))] += v
    return sums


def amalgamate(x: Composition, map_: LineageMap, floor: float | None = None) -> Amalgamation:
    """Sum leaf shares into canonical groups.

    Groups with no mass receive the zero-replacement ``floor`` (a share) and
    are listed in ``empty_groups``.
    """
    sums = group_sums(x.parts, x.values, map_)
    empty = tuple(g for g, s in zip(map_.groups, sums) if s <= 0)
    if empty:
        floor = float(replacement_delta()) if floor is None else floor
        sums = zero_replace(sums, floor)
    return Amalgamation(closure(sums, parts=map_.groups.groups), empty)


@dataclass(frozen=True)
class ModelHealth:
    confidence: float
    other_mass: float
    degraded: bool
    reasons: tuple = ()
    empty_groups: tuple = ()

    def to_dict(self) -> dict:
        return {
            "confidence": self.confidence,
            "other_mass": self.other_mass,
            "degraded": self.degraded,
            "reasons": list(self.reasons),
            "empty_groups": list(self.empty_groups),
        }


def model_health(
    x_tilde: Composition,
    confidence: float,
    c_min: float = DEFAULT_C_MIN,
    m_max: float = DEFAULT_M_MAX,
    empty_groups: Sequence[str] = (),
) -> ModelHealth:
    """Gate on extraction confidence and mass in ``"other"``.

    An empty canonical group other than ``"other"`` also degrades health,
    since its floor value is an artefact rather than a measurement.
    """
    confidence = float(confidence)
    if not 0.0 <= confidence <= 1.0:
        raise DomainError(f"confidence must lie in [0, 1], got {confidence}")
    if OTHER not in x_tilde.parts:
        raise AlignmentError(f'amalgamated composition has no "{OTHER}" group')
    other = x_tilde[OTHER]
    reasons = []
    if confidence < c_min:
        reasons.append("low-confidence")
    if other > m_max:
        reasons.append("other-mass")
    if any(g != OTHER for g in empty_groups):
        reasons.append("empty-group")
    return ModelHealth(confidence, other, bool(reasons), tuple(reasons), tuple(empty_groups))


@dataclass(frozen=True)
class OtherContributor:
    part: str
    share: float
    growing: bool


def other_contributors(
    x: Composition,
    map_: LineageMap,
    k: int,
    history: Mapping[str, Sequence[float]] | None = None,
    growth_ratio: float = DEFAULT_GROWTH_RATIO,
    window: int = DEFAULT_GROWTH_WINDOW,
) -> list[OtherContributor]:
    """Largest leaf parts routed to ``"other"``, flagging fast growers.

    A part is flagged when its share exceeds ``growth_ratio`` times the mean
    of its last ``window`` historical shares.  Parts without history are not
    flagged.
    """
    if k < 1:
        raise ConfigurationError("k must be at least 1")
    history = history or {}
    rows = []
    for p, v in zip(x.parts, x.values):
        if map_.group_of(p) != OTHER:
            continue
        past = list(history.get(p, ()))[-window:]
        growing = bool(past) and v > growth_ratio * float(np.mean(past))
        rows.append(OtherContributor(p, float(v), growing))
    rows.sort(key=lambda r: (-r.share, r.part))
    return rows[:k]
