"""Policy boundaries and proximity diagnostics.

Constraints are log-contrasts ``h(x) = sum_i a_i log x_i - b <= 0`` with
``sum_i a_i = 0``.  Because the coefficients live in the clr hyperplane, ``h``
is affine along any ray ``z + lam * u`` in ilr space, which makes the
step-to-boundary analytic.  A bisection on the composition itself is kept as
an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import bisect

from .coda import BalanceVector, Composition, ContrastBasis, ilr
from .errors import (
    AlignmentError,
    ConfigurationError,
    NotReadyError,
    PreconditionError,
    StructureError,
    UnknownPartError,
)
from .lineage import ModelHealth

COEFF_SUM_TOL = 1e-12
DEFAULT_LAMBDA_MAX = 10.0
DEFAULT_EPS = 1e-6
DEFAULT_REF_WARMUP = 28
DEFAULT_REF_RATE = 0.05
DEFAULT_MARGIN_EPS = 1e-6

LEARNING, TRACKING, FROZEN = "learning", "tracking", "frozen"


@dataclass(frozen=True)
class LogContrastConstraint:
    name: str
    coeffs: Mapping
    threshold: float = 0.0

    def __post_init__(self):
        coeffs = {k: float(v) for k, v in dict(self.coeffs).items()}
        if not coeffs or all(v == 0 for v in coeffs.values()):
            raise ConfigurationError(f"constraint {self.name!r} has no nonzero coefficient")
        total = sum(coeffs.values())
        if abs(total) > COEFF_SUM_TOL:
            raise ConfigurationError(
                f"constraint {self.name!r}: coefficients sum to {total:g}, must be 0 for a log-contrast"
            )
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "threshold", float(self.threshold))

    @classmethod
    def ratio_cap(cls, name: str, numerator: str, denominator: str, tau: float):
        """``numerator / denominator <= tau``."""
        return cls(name, {numerator: 1.0, denominator: -1.0}, math.log(tau))

    def vector(self, parts: Sequence[str]) -> np.ndarray:
        missing = [p for p in self.coeffs if p not in parts]
        if missing:
            raise UnknownPartError(f"constraint {self.name!r} references missing part(s) {missing}")
        return np.array([self.coeffs.get(p, 0.0) for p in parts])

    def to_dict(self) -> dict:
        return {"name": self.name, "coeffs": dict(self.coeffs), "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: Mapping):
        if "threshold" in d and "ratio" in d:
            raise ConfigurationError(f"constraint {d.get('name')!r}: give either threshold or ratio")
        if "ratio" in d:
            threshold = math.log(float(d["ratio"]))
        else:
            threshold = float(d.get("threshold", 0.0))
        return cls(str(d["name"]), d["coeffs"], threshold)


@dataclass(frozen=True)
class SafeSet:
    constraints: tuple = ()
    include_share_barriers: bool = True

    def __post_init__(self):
        constraints = tuple(self.constraints)
        names = [c.name for c in constraints]
        if len(set(names)) != len(names):
            raise StructureError(f"duplicate constraint names: {names}")
        object.__setattr__(self, "constraints", constraints)

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)


def barrier_index(x: Composition) -> float:
    return float(-np.sum(x.log()))


def constraint_value(c: LogContrastConstraint, x: Composition) -> float:
    return float(c.vector(x.parts) @ x.log() - c.threshold)


def constraint_values(omega: SafeSet, x: Composition) -> dict:
    return {c.name: constraint_value(c, x) for c in omega}


@dataclass(frozen=True)
class BarrierValue:
    value: float
    violated: tuple = ()


def log_barrier(x: Composition, omega: SafeSet) -> BarrierValue:
    """Share barriers plus constraint barriers; ``inf`` when any ``h_j >= 0``."""
    hs = constraint_values(omega, x)
    violated = tuple(name for name, h in hs.items() if h >= 0)
    if violated:
        return BarrierValue(math.inf, violated)
    total = barrier_index(x) if omega.include_share_barriers else 0.0
    total -= sum(math.log(-h) for h in hs.values())
    return BarrierValue(float(total), ())


CROSSING, BEYOND_MAX, INWARD = "crossing", "beyond-max", "inward-infinite"


@dataclass(frozen=True)
class StepToBoundaryResult:
    outcome: str
    lam: float
    constraint: str | None = None
    slope: float | None = None
    lam_bisection: float | None = None

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "lambda": self.lam,
            "constraint": self.constraint,
            "slope": self.slope,
            "lambda_bisection": self.lam_bisection,
        }


def _ray_terms(z, u, omega, basis):
    # h(lam) = a . (V^T (z + lam u)) - b since a sums to zero
    offsets, slopes, names = [], [], []
    zu = basis.contrast.T @ z, basis.contrast.T @ u
    for c in omega:
        a = c.vector(basis.parts)
        offsets.append(float(a @ zu[0] - c.threshold))
        slopes.append(float(a @ zu[1]))
        names.append(c.name)
    return np.array(offsets), np.array(slopes), names


def bisect_crossing(z, u, omega: SafeSet, basis: ContrastBasis, lam_max: float, eps: float):
    """First exit from the safe set along the ray, found on compositions.

    Returns ``None`` when the ray is still inside at ``lam_max``.
    """

    coeffs = np.array([c.vector(basis.parts) for c in omega])
    thresholds = np.array([c.threshold for c in omega])

    def worst(lam):
        # log-shares of the closed composition at this point of the ray
        clr_ = basis.contrast.T @ (z + lam * u)
        logx = clr_ - np.logaddexp.reduce(clr_)
        return float(np.max(coeffs @ logx - thresholds))

    if worst(lam_max) < 0:
        return None
    # max of affine functions is convex and negative at 0: a single sign change
    return float(bisect(worst, 0.0, lam_max, xtol=eps, maxiter=200))


def step_to_boundary(
    z,
    u,
    omega: SafeSet,
    basis: ContrastBasis,
    lambda_max: float = DEFAULT_LAMBDA_MAX,
    eps: float = DEFAULT_EPS,
    verify: bool = True,
) -> StepToBoundaryResult:
    """Smallest ``lam > 0`` with ``ilr_inv(z + lam * u)`` outside the safe set.

    Share barriers never cross at finite ``lam`` along an ilr ray and are
    ignored here.
    """
    if isinstance(z, BalanceVector):
        if z.basis_id != basis.id:
            raise AlignmentError("balance vector was computed with a different basis")
        z = z.coords
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    if z.shape != (basis.dim,) or u.shape != (basis.dim,):
        raise AlignmentError(f"expected vectors of length {basis.dim}")
    norm = np.linalg.norm(u)
    if not np.isclose(norm, 1.0, atol=1e-9):
        raise PreconditionError(f"direction must be a unit vector, norm is {norm:.6g}")
    if not omega.constraints:
        return StepToBoundaryResult(INWARD, math.inf)
    offsets, slopes, names = _ray_terms(z, u, omega, basis)
    inside = offsets < 0
    if not inside.all():
        bad = [n for n, ok in zip(names, inside) if not ok]
        raise PreconditionError(f"starting point is not strictly inside the safe set; violated: {bad}")
    outward = slopes > 0
    if not outward.any():
        return StepToBoundaryResult(INWARD, math.inf)
    lams = np.full(len(names), math.inf)
    lams[outward] = -offsets[outward] / slopes[outward]
    j = int(np.argmin(lams))
    lam = float(lams[j])
    if lam > lambda_max:
        return StepToBoundaryResult(BEYOND_MAX, float(lambda_max))
    lam_b = bisect_crossing(z, u, omega, basis, lambda_max, eps) if verify else None
    return StepToBoundaryResult(CROSSING, lam, names[j], float(slopes[j]), lam_b)


@dataclass(frozen=True, eq=False)
class ReferenceState:
    """Reference composition in ilr coordinates.

    While ``learning`` the running mean of incoming coordinates is
    accumulated; after ``warmup`` samples the state switches to ``tracking``
    and follows new samples by exponential smoothing at ``rate``.  ``frozen``
    marks a step where the update was suppressed.
    """

    dim: int
    mode: str = LEARNING
    z_star: np.ndarray | None = None
    samples_in_learning: int = 0
    warmup: int = DEFAULT_REF_WARMUP
    rate: float = DEFAULT_REF_RATE
    basis_id: str = ""
    _sum: np.ndarray | None = field(default=None, repr=False)

    @property
    def ready(self) -> bool:
        return self.z_star is not None and self.samples_in_learning >= self.warmup

    def balance_vector(self) -> BalanceVector:
        if not self.ready:
            raise NotReadyError("reference is still learning")
        return BalanceVector(self.z_star, self.basis_id)


def new_reference(dim: int, warmup: int = DEFAULT_REF_WARMUP, rate: float = DEFAULT_REF_RATE, basis_id: str = ""):
    if warmup < 1:
        raise ConfigurationError("reference warm-up needs at least one sample")
    if not 0 < rate <= 1:
        raise ConfigurationError(f"tracking rate must lie in (0, 1], got {rate}")
    return ReferenceState(dim=dim, warmup=warmup, rate=rate, basis_id=basis_id)


def fixed_reference(z_star, basis_id: str = "", rate: float = DEFAULT_REF_RATE) -> ReferenceState:
    """A reference set by an expert, already past warm-up."""
    z_star = np.array(z_star, dtype=float)
    return ReferenceState(
        dim=z_star.size, mode=TRACKING, z_star=z_star, samples_in_learning=1, warmup=1, rate=rate,
        basis_id=basis_id, _sum=z_star.copy(),
    )


def reference_update(
    ref: ReferenceState, z, freeze: bool = False, health: ModelHealth | None = None
) -> ReferenceState:
    if isinstance(z, BalanceVector):
        if ref.basis_id and z.basis_id != ref.basis_id:
            raise AlignmentError("balance vector was computed with a different basis")
        z = z.coords
    z = np.asarray(z, dtype=float)
    if z.shape != (ref.dim,):
        raise AlignmentError(f"expected {ref.dim} coordinates")
    if freeze or (health is not None and health.degraded):
        return replace(ref, mode=FROZEN)
    if not ref.ready:
        total = z.copy() if ref._sum is None else ref._sum + z
        n = ref.samples_in_learning + 1
        mode = TRACKING if n >= ref.warmup else LEARNING
        return replace(ref, mode=mode, z_star=total / n, samples_in_learning=n, _sum=total)
    z_star = (1.0 - ref.rate) * ref.z_star + ref.rate * z
    return replace(ref, mode=TRACKING, z_star=z_star)


def reset_reference(ref: ReferenceState) -> ReferenceState:
    """Operator-triggered re-baselining: back to learning mode."""
    return new_reference(ref.dim, ref.warmup, ref.rate, ref.basis_id)


def distance_to_reference(x: Composition, ref: ReferenceState, basis: ContrastBasis) -> float:
    if not ref.ready:
        raise NotReadyError("reference is still learning; distance-based alerts are suppressed")
    return float(np.linalg.norm(ilr(x, basis).coords - ref.z_star))


def clamp_margins(remaining: Mapping[str, float], eps: float = DEFAULT_MARGIN_EPS):
    """Turn remaining error budgets into positive parts.

    Exhausted or over-spent budgets are clamped to ``eps`` times the total
    positive budget; the deficit (how far below zero) is returned separately
    and never enters the composition.
    """
    values = {k: float(v) for k, v in remaining.items()}
    positive_total = sum(v for v in values.values() if v > 0)
    if positive_total <= 0:
        raise PreconditionError("every budget is exhausted; no composition can be formed")
    floor = eps * positive_total
    parts = {k: (v if v > 0 else floor) for k, v in values.items()}
    deficits = {k: -v for k, v in values.items() if v < 0}
    return parts, deficits
