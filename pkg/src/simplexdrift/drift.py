"""Drift direction, drift energy and balance attribution in ilr space."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Sequence

import numpy as np

from .coda import BalanceVector, ContrastBasis
from .errors import AlignmentError, ConfigurationError, DomainError

DEFAULT_LAMBDA = 0.2
DEFAULT_CLIP = 3.0
DEFAULT_DIRECTION_FLOOR = 1e-8
DEFAULT_MAD_WINDOW = 32
DEFAULT_WARMUP = 8


def delta_z(z_prev: BalanceVector, z_next: BalanceVector) -> np.ndarray:
    if z_prev.basis_id != z_next.basis_id:
        raise AlignmentError("cannot difference balance vectors from different bases")
    return z_next.coords - z_prev.coords


@dataclass(frozen=True, eq=False)
class DriftEstimate:
    """Robust EWMA of per-step balance changes.

    ``recent`` holds the last raw steps used for the running median and MAD
    that drive winsorisation.
    """

    dim: int
    smoothed: np.ndarray | None = None
    magnitude: float = 0.0
    direction: np.ndarray | None = None
    samples_seen: int = 0
    rejects: int = 0
    recent: tuple = field(default=(), repr=False)

    @property
    def ready(self) -> bool:
        return self.direction is not None


def new_estimate(dim: int) -> DriftEstimate:
    return DriftEstimate(dim=dim)


def update_estimate(
    est: DriftEstimate,
    dz,
    lam: float = DEFAULT_LAMBDA,
    clip: float = DEFAULT_CLIP,
    *,
    window: int = DEFAULT_MAD_WINDOW,
    warmup: int = DEFAULT_WARMUP,
    floor: float = DEFAULT_DIRECTION_FLOOR,
) -> DriftEstimate:
    """Fold one balance step into the estimate.

    After ``warmup`` samples each component is winsorised to
    ``median +/- clip * MAD`` over the last ``window`` raw steps before the
    EWMA update.  The first accepted sample initialises the EWMA.
    """
    if not 0 < lam <= 1:
        raise ConfigurationError(f"EWMA weight must lie in (0, 1], got {lam}")
    dz = np.asarray(dz, dtype=float)
    if dz.shape != (est.dim,):
        raise AlignmentError(f"expected a step of length {est.dim}, got shape {dz.shape}")
    if not np.all(np.isfinite(dz)):
        return replace(est, rejects=est.rejects + 1)

    step = dz
    if est.samples_seen >= warmup and est.recent:
        hist = np.asarray(est.recent)
        med = np.median(hist, axis=0)
        mad = np.median(np.abs(hist - med), axis=0)
        step = np.clip(dz, med - clip * mad, med + clip * mad)

    if est.smoothed is None:
        smoothed = step.copy()
    else:
        smoothed = (1.0 - lam) * est.smoothed + lam * step
    smoothed.setflags(write=False)
    magnitude = float(np.linalg.norm(smoothed))
    direction = None
    if magnitude >= floor:
        direction = smoothed / magnitude
        direction.setflags(write=False)
    recent = (est.recent + (dz,))[-window:]
    return DriftEstimate(
        dim=est.dim,
        smoothed=smoothed,
        magnitude=magnitude,
        direction=direction,
        samples_seen=est.samples_seen + 1,
        rejects=est.rejects,
        recent=recent,
    )


@dataclass(frozen=True, eq=False)
class EnergyProfile:
    energy: np.ndarray
    window: tuple
    scatter: np.ndarray | None = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return float(self.energy.sum())

    def top(self, k: int) -> np.ndarray:
        # stable sort keeps lower balance index first on ties
        return np.argsort(-self.energy, kind="stable")[:k]


def energy(dz_series, start: int = 0, end: int | None = None) -> EnergyProfile:
    """Per-balance drift energy ``E_j = sum_t dz[t, j]**2``.

    The full scatter matrix ``sum_t dz_t dz_t^T`` is kept as well so the
    energy can be re-expressed in a rotated basis.
    """
    arr = np.asarray(dz_series, dtype=float)
    if arr.size == 0 or arr.ndim != 2 or arr.shape[0] == 0:
        raise DomainError("energy needs a non-empty (T, dim) series")
    end = start + arr.shape[0] if end is None else end
    return EnergyProfile((arr**2).sum(axis=0), (start, end), arr.T @ arr)


@dataclass(frozen=True)
class Attribution:
    ranking: tuple
    no_drift: bool = False

    def names(self) -> list:
        return [name for name, _ in self.ranking]

    def to_list(self) -> list:
        return [{"balance": n, "value": v} for n, v in self.ranking]


def attribute(diff, basis: ContrastBasis | Sequence[str], k: int) -> Attribution:
    """Rank balances by absolute contribution, keeping signs.

    Ties go to the lower balance index.
    """
    diff = np.asarray(diff, dtype=float)
    names = basis.names if isinstance(basis, ContrastBasis) else tuple(basis)
    if len(names) != diff.size:
        raise AlignmentError(f"{diff.size} components for {len(names)} balance names")
    if k < 1:
        return Attribution((), bool(np.all(diff == 0)))
    order = sorted(range(diff.size), key=lambda j: (-abs(diff[j]), j))[:k]
    return Attribution(tuple((names[j], float(diff[j])) for j in order), bool(np.all(diff == 0)))


def _top_subspace(clr_steps, basis: ContrastBasis, k: int) -> np.ndarray:
    coords = clr_steps @ basis.contrast.T
    e = (coords**2).sum(axis=0)
    top = np.argsort(-e, kind="stable")[:k]
    return basis.contrast[top]


def attribution_sensitivity(clr_steps, bases: Sequence[ContrastBasis], k: int) -> float:
    """Agreement of top-``k`` drift attribution across candidate bases.

    ``clr_steps`` are per-step changes in clr coordinates (shape ``(T, D)``),
    which are basis-free.  Each basis ranks its balances by drift energy; the
    balance contrasts (fixed by each balance's positive and negative part
    sets) of the top ``k`` span a subspace.  Two bases agree to the extent
    their subspaces coincide, measured as the mean squared cosine of the
    principal angles.  The score is the mean over all basis pairs.
    """
    if len(bases) < 2:
        raise ConfigurationError("attribution sensitivity needs at least two bases")
    parts = bases[0].parts
    for b in bases[1:]:
        if b.parts != parts:
            raise AlignmentError("bases are defined over different parts")
    clr_steps = np.asarray(clr_steps, dtype=float)
    if clr_steps.ndim != 2 or clr_steps.shape[1] != len(parts):
        raise AlignmentError(f"expected clr steps of width {len(parts)}")
    if k < 1:
        return 0.0
    k = min(k, len(parts) - 1)
    subspaces = [_top_subspace(clr_steps, b, k) for b in bases]
    scores = []
    for A, B in combinations(subspaces, 2):
        # rows are orthonormal, so singular values of A B^T are principal-angle cosines
        s = np.linalg.svd(A @ B.T, compute_uv=False)
        scores.append(float(np.sum(s**2) / k))
    return float(np.clip(np.mean(scores), 0.0, 1.0))
