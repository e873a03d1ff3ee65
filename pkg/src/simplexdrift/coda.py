r"""Aitchison-geometry primitives on labelled compositions.

A :class:`Composition` is an ordered tuple of part identifiers paired with
strictly positive shares summing to one.  All group operations (perturbation,
powering) are carried out as sums in log space followed by a logsumexp
normalisation, so extreme shares never underflow to zero.

Balances come from a sequential binary partition (SBP) encoded as a sign
matrix; :func:`sbp_to_basis` turns it into an orthonormal contrast matrix
``V`` of shape ``(D-1, D)`` whose rows sum to zero.  Then

.. math::

    \mathrm{ilr}(x) = V\,\mathrm{clr}(x), \qquad
    \mathrm{ilr}^{-1}(z) = \mathcal{C}(\exp(V^\top z)).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AlignmentError,
    ConfigurationError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    StructureError,
)

CLOSURE_RTOL = 1e-9
LOG_FLOOR = np.log(1e-300)
DEFAULT_DETECTION_LIMIT = 1e-6
REPLACEMENT_FACTOR = 0.65


def _default_ids(n):
    return tuple(f"x{i}" for i in range(n))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Composition:
    """Strictly positive shares over an ordered set of part ids."""

    parts: tuple
    values: np.ndarray

    def __post_init__(self):
        parts = tuple(self.parts)
        values = _frozen(self.values)
        if values.ndim != 1:
            raise DimensionError("composition values must be one-dimensional")
        if len(parts) != values.size:
            raise DimensionError(f"{len(parts)} part ids for {values.size} values")
        if values.size < 2:
            raise DimensionError("a composition needs at least 2 parts")
        if len(set(parts)) != len(parts):
            dupes = sorted({p for p in parts if parts.count(p) > 1})
            raise StructureError(f"duplicate part ids: {dupes}")
        bad = [p for p, v in zip(parts, values) if not (np.isfinite(v) and v > 0)]
        if bad:
            raise DomainError(f"non-positive or non-finite share for part(s) {bad}")
        total = values.sum()
        if abs(total - 1.0) > CLOSURE_RTOL:
            raise DomainError(f"shares sum to {total!r}, not 1; use closure()")
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_mapping(cls, shares: Mapping[str, float]) -> "Composition":
        return closure(list(shares.values()), parts=list(shares.keys()))

    def __len__(self):
        return len(self.parts)

    def __getitem__(self, part):
        try:
            return float(self.values[self.parts.index(part)])
        except ValueError:
            raise KeyError(part) from None

    def __eq__(self, other):
        if not isinstance(other, Composition):
            return NotImplemented
        return self.parts == other.parts and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.parts, self.values.tobytes()))

    def __repr__(self):
        body = ", ".join(f"{p}={v:.6g}" for p, v in zip(self.parts, self.values))
        return f"Composition({body})"

    def log(self) -> np.ndarray:
        return np.log(self.values)

    def as_dict(self) -> dict:
        return {p: float(v) for p, v in zip(self.parts, self.values)}


def uniform(parts: Sequence[str] | int) -> Composition:
    if isinstance(parts, int):
        parts = _default_ids(parts)
    n = len(parts)
    return Composition(tuple(parts), np.full(n, 1.0 / n))


def closure(v, parts: Sequence[str] | None = None) -> Composition:
    """Normalise a positive vector to unit sum.

    ``v`` may be a sequence, an array or a mapping of part id to value.  Part
    ids default to ``x0, x1, ...`` when not supplied.
    """
    if isinstance(v, Mapping):
        parts = list(v.keys()) if parts is None else parts
        v = list(v.values())
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise DimensionError("closure expects a one-dimensional vector")
    if arr.size < 2:
        raise DimensionError(f"closure needs at least 2 parts, got {arr.size}")
    parts = _default_ids(arr.size) if parts is None else tuple(parts)
    if len(parts) != arr.size:
        raise DimensionError(f"{len(parts)} part ids for {arr.size} values")
    bad = [p for p, x in zip(parts, arr) if not (np.isfinite(x) and x > 0)]
    if bad:
        raise DomainError(f"closure requires strictly positive values; offending part(s): {bad}")
    return Composition(parts, arr / arr.sum())


def _close_logs(logv):
    # exp(l - logsumexp(l)) with a floor so nothing underflows to exactly zero
    shifted = np.maximum(logv - np.logaddexp.reduce(logv), LOG_FLOOR)
    out = np.exp(shifted)
    return out / out.sum()


def closure_from_logs(logv, parts: Sequence[str]) -> Composition:
    return Composition(tuple(parts), _close_logs(np.asarray(logv, dtype=float)))


def _check_aligned(x: Composition, y: Composition):
    if x.parts != y.parts:
        raise AlignmentError(f"part ids differ: {x.parts} vs {y.parts}")


def perturb(x: Composition, y: Composition) -> Composition:
    _check_aligned(x, y)
    return closure_from_logs(x.log() + y.log(), x.parts)


def power(alpha: float, x: Composition) -> Composition:
    alpha = float(alpha)
    if not np.isfinite(alpha):
        raise DomainError(f"powering coefficient must be finite, got {alpha}")
    return closure_from_logs(alpha * x.log(), x.parts)


def inverse(x: Composition) -> Composition:
    return power(-1.0, x)


def clr(x: Composition) -> np.ndarray:
    lx = x.log()
    return lx - lx.mean()


@dataclass(frozen=True, eq=False)
class ContrastBasis:
    """Orthonormal log-contrast basis built from a sequential binary partition."""

    parts: tuple
    sbp: np.ndarray
    contrast: np.ndarray
    names: tuple
    id: str = field(default="")

    @property
    def dim(self) -> int:
        return self.contrast.shape[0]

    def __len__(self):
        return self.dim

    def balance_sets(self, j: int) -> tuple[frozenset, frozenset]:
        row = self.sbp[j]
        pos = frozenset(p for p, s in zip(self.parts, row) if s > 0)
        neg = frozenset(p for p, s in zip(self.parts, row) if s < 0)
        return pos, neg

    def to_dict(self) -> dict:
        return {
            "parts": list(self.parts),
            "sbp": self.sbp.astype(int).tolist(),
            "names": list(self.names),
        }


def _balance_name(parts, row):
    pos = ",".join(p for p, s in zip(parts, row) if s > 0)
    neg = ",".join(p for p, s in zip(parts, row) if s < 0)
    return f"{pos} vs {neg}"


def _validate_sbp(sbp):
    n_rows, n_parts = sbp.shape
    if n_parts < 2:
        raise StructureError("an SBP needs at least 2 parts")
    if n_rows != n_parts - 1:
        raise StructureError(f"an SBP over {n_parts} parts needs {n_parts - 1} rows, got {n_rows}")
    if not np.isin(sbp, (-1, 0, 1)).all():
        raise StructureError("SBP entries must be +1, -1 or 0")
    splits = {}
    for j, row in enumerate(sbp):
        pos = frozenset(np.flatnonzero(row > 0).tolist())
        neg = frozenset(np.flatnonzero(row < 0).tolist())
        if not pos or not neg:
            raise StructureError(f"SBP row {j} needs at least one positive and one negative entry")
        splits[j] = (pos, neg)
    # rows may be listed in any order; each must split a group produced by an earlier split
    undivided = [frozenset(range(n_parts))]
    remaining = dict(splits)
    while remaining:
        j = next((j for j, (p, n) in remaining.items() if (p | n) in undivided), None)
        if j is None:
            j = min(remaining)
            support = sorted(remaining[j][0] | remaining[j][1])
            raise StructureError(f"SBP row {j} does not split a previously undivided group (support {support})")
        pos, neg = remaining.pop(j)
        undivided.remove(pos | neg)
        undivided.extend(g for g in (pos, neg) if len(g) > 1)


def sbp_to_basis(sbp, names: Sequence[str] | None = None, parts: Sequence[str] | None = None) -> ContrastBasis:
    """Build the orthonormal balance basis for a sequential binary partition.

    Row ``j`` of the contrast matrix holds ``+sqrt(s / (r (r + s)))`` on its
    ``r`` positive parts and ``-sqrt(r / (s (r + s)))`` on its ``s`` negative
    parts.
    """
    sbp = np.asarray(sbp)
    if sbp.ndim != 2:
        raise StructureError("SBP must be a 2-D sign matrix")
    if not np.all(np.equal(np.mod(sbp, 1), 0)):
        raise StructureError("SBP entries must be integers in {-1, 0, +1}")
    sbp = sbp.astype(int)
    _validate_sbp(sbp)
    n_parts = sbp.shape[1]
    parts = _default_ids(n_parts) if parts is None else tuple(parts)
    if len(parts) != n_parts:
        raise DimensionError(f"{len(parts)} part ids for an SBP over {n_parts} parts")
    if len(set(parts)) != n_parts:
        raise StructureError("duplicate part ids in basis")
    V = np.zeros(sbp.shape, dtype=float)
    for j, row in enumerate(sbp):
        r = np.count_nonzero(row > 0)
        s = np.count_nonzero(row < 0)
        V[j, row > 0] = np.sqrt(s / (r * (r + s)))
        V[j, row < 0] = -np.sqrt(r / (s * (r + s)))
    if names is None:
        names = tuple(_balance_name(parts, row) for row in sbp)
    names = tuple(names)
    if len(names) != V.shape[0]:
        raise StructureError(f"{len(names)} balance names for {V.shape[0]} balances")
    digest = hashlib.sha1(repr((parts, sbp.tolist())).encode()).hexdigest()[:12]
    sbp.setflags(write=False)
    V.setflags(write=False)
    return ContrastBasis(parts=parts, sbp=sbp, contrast=V, names=names, id=digest)


def default_sbp(n_parts: int) -> np.ndarray:
    """Cascade partition: part 0 vs 1, then {0,1} vs 2, and so on."""
    sbp = np.zeros((n_parts - 1, n_parts), dtype=int)
    for j in range(n_parts - 1):
        sbp[j, : j + 1] = 1
        sbp[j, j + 1] = -1
    return sbp


@dataclass(frozen=True, eq=False)
class BalanceVector:
    coords: np.ndarray
    basis_id: str

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen(self.coords))

    def __len__(self):
        return self.coords.size

    def __sub__(self, other):
        if not isinstance(other, BalanceVector):
            return NotImplemented
        if other.basis_id != self.basis_id:
            raise AlignmentError("balance vectors use different bases")
        return self.coords - other.coords


def ilr(x: Composition, basis: ContrastBasis) -> BalanceVector:
    if x.parts != basis.parts:
        raise AlignmentError(f"composition parts {x.parts} do not match basis parts {basis.parts}")
    return BalanceVector(basis.contrast @ clr(x), basis.id)


def ilr_inv(z, basis: ContrastBasis) -> Composition:
    if isinstance(z, BalanceVector):
        if z.basis_id != basis.id:
            raise AlignmentError("balance vector was computed with a different basis")
        z = z.coords
    z = np.asarray(z, dtype=float)
    if z.shape != (basis.dim,):
        raise AlignmentError(f"expected {basis.dim} coordinates, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("ilr coordinates must be finite")
    return closure_from_logs(basis.contrast.T @ z, basis.parts)


def aitchison_distance(x: Composition, y: Composition, basis: ContrastBasis | None = None) -> float:
    """Aitchison distance; equals the clr Euclidean distance for any basis."""
    _check_aligned(x, y)
    if basis is None:
        return float(np.linalg.norm(clr(x) - clr(y)))
    return float(np.linalg.norm(ilr(x, basis) - ilr(y, basis)))


def replacement_delta(detection_limit=DEFAULT_DETECTION_LIMIT):
    return REPLACEMENT_FACTOR * np.asarray(detection_limit, dtype=float)


def zero_replace(v, delta=None) -> np.ndarray:
    """Multiplicative replacement of rounded zeros.

    ``delta`` is expressed as a share of the vector total (scalar or per
    part).  Zeros become ``delta * total`` and the positive entries shrink by
    ``1 - sum(replaced delta)`` so the total is unchanged.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError("zero_replace expects a one-dimensional vector")
    if np.any(~np.isfinite(v)) or np.any(v < 0):
        raise DomainError("zero_replace expects finite non-negative values")
    total = v.sum()
    if total <= 0:
        raise DegenerateInputError("cannot replace zeros in an all-zero vector")
    zeros = v == 0
    if not zeros.any():
        return v.copy()
    delta = replacement_delta() if delta is None else delta
    delta = np.broadcast_to(np.asarray(delta, dtype=float), v.shape)
    if np.any(delta[zeros] <= 0):
        raise ConfigurationError("replacement delta must be positive")
    shares = v / total
    smallest = shares[~zeros].min()
    if np.any(delta[zeros] >= smallest):
        raise ConfigurationError(
            f"replacement delta {delta[zeros].max():g} is not below the smallest positive share {smallest:g}"
        )
    replaced = delta[zeros].sum()
    if replaced >= 1:
        raise ConfigurationError("replacement deltas sum to 1 or more")
    out = np.where(zeros, delta * total, v * (1.0 - replaced))
    return out
