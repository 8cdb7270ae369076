"""Model types and builders for multistate linear-sweep Hamiltonians.

A model is an N-level Hamiltonian, linear in time,

    H(t) = A + B t,

held in the basis where B = diag(slopes) and the diagonal of A supplies the
level offsets.  Couplings are the real off-diagonal entries of A.  All builders
in this module return immutable :class:`MLZModel` instances; family-specific
constraints (sign patterns, coupling sum rules, slope hierarchies) are enforced
at build time so that downstream consumers can rely on them.

Levels are indexed from 0 in this API.  The command-line layer presents
1-based indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ModelError",
    "MLZModel",
    "TwoBandSpec",
    "BowtieSpec",
    "DTCMSpec",
    "TwoByThreeSpec",
    "lz_probability",
    "hamiltonian_at",
    "build_two_band",
    "solve_coupling_closure",
    "build_bowtie_family",
    "bowtie_contour",
    "pullback_contour",
    "build_dtcm",
    "build_2x3",
    "two_band_residuals",
    "random_two_band_spec",
    "random_bowtie_spec",
]

#: Relative tolerance for the coupling sum rule of the two-band family.
CLOSURE_RTOL = 1e-10


class ModelError(ValueError):
    """Raised when parameters violate a model-construction constraint."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _sign_array(values, name: str, length: int) -> np.ndarray:
    out = np.asarray(values, dtype=int)
    if out.shape != (length,):
        raise ModelError(f"{name} must have length {length}, got shape {out.shape}")
    if not np.all(np.abs(out) == 1):
        raise ModelError(f"{name} entries must be +1 or -1")
    return out


@dataclass(frozen=True)
class MLZModel:
    """Immutable N-level linear-sweep Hamiltonian H(t) = A + B t.

    Parameters
    ----------
    n : int
        Number of levels.
    slopes : ndarray, shape (n,)
        Diagonal of B.  Two levels may share a slope only if their coupling
        vanishes; a coupled degenerate pair has no crossing and is rejected.
    offsets : ndarray, shape (n,)
        Diagonal of A.
    couplings : ndarray, shape (n, n)
        Real symmetric off-diagonal part of A (zero diagonal).
    """

    n: int
    slopes: np.ndarray
    offsets: np.ndarray
    couplings: np.ndarray

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 2:
            raise ModelError(f"need at least two levels, got n={n}")
        slopes = np.asarray(self.slopes, dtype=float)
        offsets = np.asarray(self.offsets, dtype=float)
        couplings = np.asarray(self.couplings, dtype=float)
        if np.iscomplexobj(self.couplings):
            raise ModelError("couplings must be real")
        if slopes.shape != (n,) or offsets.shape != (n,):
            raise ModelError("slopes and offsets must both have shape (n,)")
        if couplings.shape != (n, n):
            raise ModelError(f"couplings must have shape ({n}, {n})")
        for name, arr in (("slopes", slopes), ("offsets", offsets), ("couplings", couplings)):
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} contains non-finite entries")
        if not np.array_equal(couplings, couplings.T):
            raise ModelError("couplings must be symmetric")
        if np.any(np.diagonal(couplings) != 0.0):
            raise ModelError("couplings must have zero diagonal")
        dupes = [
            (a, b)
            for a in range(n)
            for b in range(a + 1, n)
            if slopes[a] == slopes[b] and couplings[a, b] != 0.0
        ]
        if dupes:
            raise ModelError(f"coupled levels with equal slopes never cross: {dupes}")
        object.__setattr__(self, "slopes", _readonly(slopes))
        object.__setattr__(self, "offsets", _readonly(offsets))
        object.__setattr__(self, "couplings", _readonly(couplings))

    def coupled_pairs(self) -> list[tuple[int, int]]:
        """Pairs (a, b), a < b, with a nonzero direct coupling."""
        return [
            (a, b)
            for a in range(self.n)
            for b in range(a + 1, self.n)
            if self.couplings[a, b] != 0.0
        ]

    def crossing_time(self, a: int, b: int) -> float:
        """Time at which diabatic levels a and b intersect."""
        db = self.slopes[a] - self.slopes[b]
        if db == 0.0:
            raise ModelError(f"levels {a} and {b} are parallel and never cross")
        return float(-(self.offsets[a] - self.offsets[b]) / db)


def hamiltonian_at(model: MLZModel, t: float) -> np.ndarray:
    """Dense Hamiltonian matrix of ``model`` at time ``t``."""
    h = np.array(model.couplings, dtype=float, copy=True)
    h[np.diag_indices(model.n)] = model.slopes * t + model.offsets
    return h


def lz_probability(g: float, beta_a: float, beta_b: float) -> float:
    """Probability of staying diabatic through an isolated two-level crossing.

    For coupling ``g`` between levels with distinct slopes ``beta_a`` and
    ``beta_b`` this is ``exp(-2 pi g^2 / |beta_a - beta_b|)``.
    """
    if beta_a == beta_b:
        raise ModelError("degenerate slopes: no isolated crossing exists")
    return float(math.exp(-2.0 * math.pi * g * g / abs(beta_a - beta_b)))


# ---------------------------------------------------------------------------
# Two-band family


@dataclass(frozen=True)
class TwoBandSpec:
    """Parameters of the solvable family with two opposite central slopes.

    Levels 0 and 1 sweep with slopes ``+b`` and ``-b`` and zero offsets;
    levels 2..n-1 ("outer" levels) have slopes ``b_i`` with ``|b_i| > b``.
    Offsets of the outer levels are ``lambda_i * e * sqrt(b_i**2/b**2 - 1)``,
    couplings to level 1 follow from those to level 0 via
    ``g2 = tau_i * g1 * sqrt((b_i + b)/(b_i - b))``, and the sign
    constraint ``lambda_i * tau_i * sign(b_i) = rho`` ties the two sign sets
    together.  One entry of ``g1_i`` may be NaN to mark it as unknown; see
    :func:`solve_coupling_closure`.

    ``tau_i`` may be omitted, in which case it is derived from ``lambda_i``
    and ``rho``; ``rho`` may be omitted (defaults to +1, or to the value
    implied by a supplied ``tau_i``).
    """

    n: int
    b: float
    b_i: np.ndarray
    g1_i: np.ndarray
    e: float = 1.0
    lambda_i: np.ndarray | None = None
    tau_i: np.ndarray | None = None
    rho: int | None = None

    def __post_init__(self):
        n = self.n
        if n < 4:
            raise ModelError("two-band family needs at least four levels")
        m = n - 2
        b = float(self.b)
        if not (b > 0.0 and math.isfinite(b)):
            raise ModelError("central slope b must be positive and finite")
        b_i = np.asarray(self.b_i, dtype=float)
        if b_i.shape != (m,):
            raise ModelError(f"b_i must have length {m}")
        if not np.all(np.isfinite(b_i)):
            raise ModelError("b_i contains non-finite entries")
        if np.any(np.abs(b_i) <= b):
            raise ModelError("outer slope magnitudes must exceed the central slope b")
        all_slopes = np.concatenate(([b, -b], b_i))
        if len(np.unique(all_slopes)) != n:
            raise ModelError("slopes must be pairwise distinct in the two-band family")
        g1_i = np.asarray(self.g1_i, dtype=float)
        if g1_i.shape != (m,):
            raise ModelError(f"g1_i must have length {m}")
        if np.any(np.isinf(g1_i)):
            raise ModelError("g1_i contains infinities")
        e = float(self.e)
        if not (e >= 0.0 and math.isfinite(e)):
            raise ModelError("offset scale e must be nonnegative")
        lam = (
            np.ones(m, dtype=int)
            if self.lambda_i is None
            else _sign_array(self.lambda_i, "lambda_i", m)
        )
        sigma = np.sign(b_i).astype(int)
        rho = self.rho
        tau = self.tau_i
        if tau is None:
            if rho is None:
                rho = 1
            if rho not in (1, -1):
                raise ModelError("rho must be +1 or -1")
            tau = rho * lam * sigma
        else:
            tau = _sign_array(tau, "tau_i", m)
            implied = lam * tau * sigma
            if len(set(implied.tolist())) != 1:
                raise ModelError(
                    "lambda_i * tau_i * sign(b_i) must be the same for every outer level"
                )
            if rho is None:
                rho = int(implied[0])
            elif rho != implied[0]:
                raise ModelError("supplied rho contradicts lambda_i * tau_i * sign(b_i)")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "b_i", _readonly(b_i))
        object.__setattr__(self, "g1_i", _readonly(g1_i))
        object.__setattr__(self, "lambda_i", _readonly(lam).astype(int))
        object.__setattr__(self, "tau_i", _readonly(tau).astype(int))
        object.__setattr__(self, "rho", int(rho))

    def closure_terms(self) -> np.ndarray:
        """Per-level terms ``g1_i**2 / (b_i - b)`` of the coupling sum rule."""
        return np.asarray(self.g1_i) ** 2 / (np.asarray(self.b_i) - self.b)


def _check_closure(spec: TwoBandSpec) -> None:
    terms = spec.closure_terms()
    scale = float(np.max(np.abs(terms))) if terms.size else 0.0
    resid = abs(float(np.sum(terms)))
    if scale == 0.0:
        return  # all couplings vanish: trivially closed
    if resid > CLOSURE_RTOL * scale:
        raise ModelError(
            f"coupling sum rule violated: sum(g1_i^2/(b_i-b)) = {resid:.3e} "
            f"(largest term {scale:.3e})"
        )


def build_two_band(spec: TwoBandSpec) -> MLZModel:
    """Construct the two-band model from its spec.

    Validates the coupling sum rule ``sum_i g1_i^2 / (b_i - b) = 0`` to a
    relative tolerance of ``1e-10`` against the largest term, then assembles
    slopes, offsets and both rows of couplings.
    """
    if np.any(np.isnan(spec.g1_i)):
        raise ModelError(
            "g1_i contains an unresolved (NaN) entry; use solve_coupling_closure first"
        )
    _check_closure(spec)
    b, b_i = spec.b, np.asarray(spec.b_i)
    n, m = spec.n, spec.n - 2
    slopes = np.concatenate(([b, -b], b_i))
    offsets = np.concatenate(
        ([0.0, 0.0], spec.lambda_i * spec.e * np.sqrt(b_i**2 / b**2 - 1.0))
    )
    g1 = np.asarray(spec.g1_i)
    g2 = spec.tau_i * g1 * np.sqrt((b_i + b) / (b_i - b))
    couplings = np.zeros((n, n))
    couplings[0, 2:] = couplings[2:, 0] = g1
    couplings[1, 2:] = couplings[2:, 1] = g2
    return MLZModel(n=n, slopes=slopes, offsets=offsets, couplings=couplings)


def solve_coupling_closure(spec: TwoBandSpec) -> float:
    """Magnitude of the single unset coupling that closes the sum rule.

    Exactly one entry of ``spec.g1_i`` must be NaN.  Returns ``|g1|`` for
    that level such that ``sum_i g1_i^2 / (b_i - b) = 0``; raises
    :class:`ModelError` if no real solution exists (the unset level sits on
    the wrong side of the central slope).
    """
    g1 = np.asarray(spec.g1_i)
    unset = np.flatnonzero(np.isnan(g1))
    if unset.size != 1:
        raise ModelError("exactly one entry of g1_i must be NaN to solve the sum rule")
    k = int(unset[0])
    b_i = np.asarray(spec.b_i)
    partial = float(np.sum(np.delete(g1, k) ** 2 / (np.delete(b_i, k) - spec.b)))
    g_sq = -partial * (b_i[k] - spec.b)
    if g_sq < 0.0:
        raise ModelError(
            "no real coupling closes the sum rule at this level; "
            "the unset level must lie on the opposite slope side"
        )
    return math.sqrt(g_sq)


def two_band_residuals(model: MLZModel) -> dict[str, float]:
    """How far ``model`` sits from the two-band family shape.

    Quantifies, for a model whose first two levels form the central band:
    the offset of levels 0 and 1, the slope mismatch ``slopes[0]+slopes[1]``,
    the outer-offset rule, the coupling-ratio rule and the coupling sum rule.
    All residuals are absolute except ``closure`` which is relative to the
    largest sum-rule term.  Intended for validating pullback constructions.
    """
    b = float(model.slopes[0])
    if b <= 0.0:
        raise ModelError("two-band shape requires slopes[0] > 0")
    b_i = np.asarray(model.slopes[2:])
    e1 = float(np.max(np.abs(model.offsets[:2]), initial=0.0))
    central = abs(float(model.slopes[0] + model.slopes[1]))
    g1 = np.asarray(model.couplings[0, 2:])
    g2 = np.asarray(model.couplings[1, 2:])
    # offsets: |e_i| = e * sqrt(b_i^2/b^2 - 1) for a common scale e >= 0
    stretch = np.sqrt(b_i**2 / b**2 - 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        scales = np.abs(model.offsets[2:]) / stretch
    scales = scales[np.isfinite(scales)]
    offset_rule = float(np.max(scales) - np.min(scales)) if scales.size else 0.0
    ratio_rule = float(
        np.max(np.abs(np.abs(g2) - np.abs(g1) * np.sqrt((b_i + b) / (b_i - b))), initial=0.0)
    )
    terms = g1**2 / (b_i - b)
    scale = float(np.max(np.abs(terms), initial=0.0))
    closure = abs(float(np.sum(terms))) / scale if scale > 0.0 else 0.0
    return {
        "central_offsets": e1,
        "central_slopes": central,
        "offset_rule": offset_rule,
        "coupling_ratio": ratio_rule,
        "closure": closure,
    }


# ---------------------------------------------------------------------------
# Bowtie-like commuting family


@dataclass(frozen=True)
class BowtieSpec:
    """Parameters of the two-generator commuting family built on a bowtie.

    Levels 0 and 1 cross all outer levels 2..n-1 at a common point in the
    generator picture; ``beta_i`` are the outer slopes and ``gamma_i`` the
    couplings there.  The construction requires the balance condition
    ``sum_i gamma_i**2 / beta_i = 0``.  ``a`` and ``e`` fix the standard
    sweep through the family: both generator coordinates advance with speed
    ``a`` and are offset by ``-e`` and ``+e``.
    """

    n: int
    beta_i: np.ndarray
    gamma_i: np.ndarray
    a: float = 1.0
    e: float = 1.0

    def __post_init__(self):
        n = self.n
        if n < 3:
            raise ModelError("bowtie family needs at least three levels")
        m = n - 2
        beta = np.asarray(self.beta_i, dtype=float)
        gamma = np.asarray(self.gamma_i, dtype=float)
        if beta.shape != (m,) or gamma.shape != (m,):
            raise ModelError(f"beta_i and gamma_i must both have length {m}")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(gamma))):
            raise ModelError("beta_i/gamma_i contain non-finite entries")
        if np.any(beta == 0.0):
            raise ModelError("outer generator slopes beta_i must be nonzero")
        a = float(self.a)
        e = float(self.e)
        if not (a > 0.0 and math.isfinite(a)):
            raise ModelError("sweep speed a must be positive")
        if not math.isfinite(e):
            raise ModelError("sweep offset e must be finite")
        terms = gamma**2 / beta
        scale = float(np.max(np.abs(terms), initial=0.0))
        if scale > 0.0 and abs(float(np.sum(terms))) > CLOSURE_RTOL * scale:
            raise ModelError(
                "balance condition violated: sum(gamma_i^2/beta_i) must vanish"
            )
        object.__setattr__(self, "beta_i", _readonly(beta))
        object.__setattr__(self, "gamma_i", _readonly(gamma))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "e", e)


def build_bowtie_family(spec: BowtieSpec):
    """Two-generator commuting family whose members are bowtie Hamiltonians.

    Returns an :class:`~lzkit.integrability.MTLZFamily` with generators

        H_j(tau) = B_{kj} tau^k + A_j ,   j, k in {0, 1}.

    The diagonal blocks put slopes (0, 0, beta_i) and (0, 0, 1/(4 beta_i))
    on the two generator coordinates, the mixed block splits levels 0 and 1
    with slopes (1/2, -1/2, 0, ...), and the couplings are gamma_i in the
    first generator and -+ gamma_i/(2 beta_i) in the second.  The balance
    condition of the spec makes the generators commute.
    """
    from .integrability import MTLZFamily

    n, m = spec.n, spec.n - 2
    beta = np.asarray(spec.beta_i)
    gamma = np.asarray(spec.gamma_i)
    B = np.zeros((2, 2, n, n))
    B[0, 0][np.diag_indices(n)] = np.concatenate(([0.0, 0.0], beta))
    B[1, 1][np.diag_indices(n)] = np.concatenate(([0.0, 0.0], 0.25 / beta))
    half = np.zeros(n)
    half[0], half[1] = 0.5, -0.5
    B[0, 1][np.diag_indices(n)] = half
    B[1, 0][np.diag_indices(n)] = half
    A = np.zeros((2, n, n))
    A[0, 0, 2:] = A[0, 2:, 0] = gamma
    A[0, 1, 2:] = A[0, 2:, 1] = gamma
    A[1, 0, 2:] = A[1, 2:, 0] = -gamma / (2.0 * beta)
    A[1, 1, 2:] = A[1, 2:, 1] = gamma / (2.0 * beta)
    return MTLZFamily(m_plus_1=2, B=B, A=A)


def bowtie_contour(spec: BowtieSpec) -> tuple[np.ndarray, np.ndarray]:
    """Standard sweep (v, eps) through the bowtie family: tau^k = v_k t + eps_k."""
    return (
        np.array([spec.a, spec.a]),
        np.array([-spec.e, spec.e]),
    )


def pullback_contour(family, v, eps) -> MLZModel:
    """Restrict a commuting family to the line tau^k(t) = v_k t + eps_k.

    The restriction of ``H_j(tau(t)) * v^j`` summed over generators is again
    linear in t; its slopes, offsets and couplings are read off in the
    family's common diabatic basis and returned as an :class:`MLZModel`.
    """
    v = np.asarray(v, dtype=float)
    eps = np.asarray(eps, dtype=float)
    mp1 = family.m_plus_1
    if v.shape != (mp1,) or eps.shape != (mp1,):
        raise ModelError(f"v and eps must have shape ({mp1},)")
    slopes = np.einsum("akj,k,j->a", family.Lambda, v, v)
    offsets = np.einsum("akj,k,j->a", family.Lambda, eps, v)
    couplings = np.einsum("jab,j->ab", family.couplings_diabatic(), v)
    couplings = 0.5 * (couplings + couplings.T)
    couplings[np.diag_indices(couplings.shape[0])] = 0.0
    return MLZModel(
        n=couplings.shape[0], slopes=slopes, offsets=offsets, couplings=couplings
    )


# ---------------------------------------------------------------------------
# Driven spin sector model


@dataclass(frozen=True)
class DTCMSpec:
    """Spin register coupled to a driven mode, one sector slope per flip count.

    ``n_spins`` spins give 2**n_spins levels grouped by the number of up
    spins.  Sector n carries slope ``(1+gamma_distort)*beta / (1 - gamma_distort*(n-2)/n)``
    for n >= 1 (zero for n = 0), so ``gamma_distort = 0`` collapses all
    excited sectors onto the slope ``beta`` and ``gamma_distort = 1`` makes
    the ladder equidistant.  ``epsilon_i`` are per-spin offsets and ``g`` the
    elementary flip coupling, enhanced by ``sqrt(n_bosons + n)`` in sector n.
    """

    n_spins: int
    n_bosons: int
    beta: float
    gamma_distort: float
    epsilon_i: np.ndarray
    g: float

    def __post_init__(self):
        if self.n_spins < 1:
            raise ModelError("need at least one spin")
        if self.n_bosons < 0:
            raise ModelError("n_bosons must be nonnegative")
        beta = float(self.beta)
        if beta == 0.0 or not math.isfinite(beta):
            raise ModelError("beta must be nonzero and finite")
        gamma = float(self.gamma_distort)
        if not math.isfinite(gamma):
            raise ModelError("gamma_distort must be finite")
        eps = np.asarray(self.epsilon_i, dtype=float)
        if eps.shape != (self.n_spins,):
            raise ModelError(f"epsilon_i must have length {self.n_spins}")
        if not np.all(np.isfinite(eps)):
            raise ModelError("epsilon_i contains non-finite entries")
        for n in range(1, self.n_spins + 1):
            if abs(1.0 - gamma * (n - 2) / n) < 1e-12 * (1.0 + abs(gamma)):
                raise ModelError(f"sector {n} slope denominator vanishes")
        if gamma == 0.0:
            raise ModelError(
                "gamma_distort = 0 puts coupled sectors on equal slopes; "
                "the model is then outside the solvable class"
            )
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma_distort", gamma)
        object.__setattr__(self, "epsilon_i", _readonly(eps))
        object.__setattr__(self, "g", float(self.g))

    def sector_slope(self, n_up: int) -> float:
        """Slope shared by all levels with ``n_up`` up spins."""
        if n_up == 0:
            return 0.0
        return (1.0 + self.gamma_distort) * self.beta / (
            1.0 - self.gamma_distort * (n_up - 2) / n_up
        )


def build_dtcm(spec: DTCMSpec) -> MLZModel:
    """Spin-register model on the full 2**n_spins basis.

    Basis states are spin bitmasks ordered by (flip count, mask value).
    Within a sector all levels share a slope and are mutually uncoupled;
    single-flip transitions between adjacent sectors carry coupling
    ``g * sqrt(n_bosons + n + 1) * sqrt((b_{n+1} - b_n)/beta)`` where ``b_n``
    is the sector-n slope.  A negative radicand (slope ladder not monotone
    in the sweep sense) is rejected.
    """
    ns = spec.n_spins
    states = sorted(range(2**ns), key=lambda s: (bin(s).count("1"), s))
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    slopes = np.empty(n)
    offsets = np.empty(n)
    for s, i in index.items():
        n_up = bin(s).count("1")
        b_n = spec.sector_slope(n_up)
        slopes[i] = b_n
        if n_up == 0:
            offsets[i] = 0.0
        else:
            acc = sum(spec.epsilon_i[k] for k in range(ns) if s >> k & 1)
            offsets[i] = b_n * acc / (n_up * spec.beta)
    couplings = np.zeros((n, n))
    for s, i in index.items():
        n_up = bin(s).count("1")
        if n_up == ns:  # top sector: nothing left to flip up
            continue
        step = spec.sector_slope(n_up + 1) - spec.sector_slope(n_up)
        for k in range(ns):
            if s >> k & 1:
                continue
            radicand = step / spec.beta
            if radicand < 0.0:
                raise ModelError(
                    f"sector slope step {n_up}->{n_up + 1} opposes the sweep; "
                    "flip coupling would be imaginary"
                )
            j = index[s | (1 << k)]
            val = spec.g * math.sqrt(spec.n_bosons + n_up + 1) * math.sqrt(radicand)
            couplings[i, j] = couplings[j, i] = val
    return MLZModel(n=n, slopes=slopes, offsets=offsets, couplings=couplings)


# ---------------------------------------------------------------------------
# Six-level two-by-three grid model


@dataclass(frozen=True)
class TwoByThreeSpec:
    """Six-level solvable model built on a 2 x 3 coupling grid.

    Slopes are ``(b1, -b2, -b2, b3, -b1, -b1)`` with ``b1, b2, b3 > 0``.
    Levels 1 and 2 carry free offsets ``e2`` and ``e3``; the offsets of
    levels 4 and 5 are fixed multiples of those, with the multiplier set by
    the slope ratios and a branch sign.  Couplings ``g1, g2, g3`` seed a
    specific seven-bond pattern whose remaining bonds follow from slope
    ratios.
    """

    b1: float
    b2: float
    b3: float
    e2: float
    e3: float
    g1: float
    g2: float
    g3: float
    branch: int = 1

    def __post_init__(self):
        b1, b2, b3 = float(self.b1), float(self.b2), float(self.b3)
        for name, v in (("b1", b1), ("b2", b2), ("b3", b3)):
            if not (v > 0.0 and math.isfinite(v)):
                raise ModelError(f"{name} must be positive and finite")
        if b1 == b2:
            raise ModelError("b1 = b2 degenerates the construction")
        if self.branch not in (1, -1):
            raise ModelError("branch must be +1 or -1")
        if (b1 - b2) * (b1 - b3) < 0.0:
            raise ModelError(
                "offset multiplier is complex: b1 must not lie strictly "
                "between b2 and b3"
            )
        if (b1 - b3) / (b1 - b2) < 0.0:
            raise ModelError("coupling radicand (b1-b3)/(b1-b2) is negative")
        for name in ("e2", "e3", "g1", "g2", "g3"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ModelError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "b2", b2)
        object.__setattr__(self, "b3", b3)

    def offset_multiplier(self) -> float:
        """Factor mapping (e2, e3) to the offsets of the last two levels."""
        b1, b2, b3 = self.b1, self.b2, self.b3
        root = math.sqrt((b1 - b2) * (b1 - b3) / ((b1 + b2) * (b1 + b3)))
        return (b1 + b3) / (b2 + b3) * (1.0 + self.branch * root)


def build_2x3(spec: TwoByThreeSpec) -> MLZModel:
    """Assemble the six-level grid model from its spec."""
    b1, b2, b3 = spec.b1, spec.b2, spec.b3
    F = spec.offset_multiplier()
    slopes = np.array([b1, -b2, -b2, b3, -b1, -b1])
    offsets = np.array([0.0, spec.e2, spec.e3, 0.0, F * spec.e2, F * spec.e3])
    lift = math.sqrt((b1 + b3) / (b1 + b2))
    couplings = np.zeros((6, 6))
    bonds = {
        (0, 1): spec.g2,
        (0, 2): spec.g3,
        (0, 3): spec.g1 * math.sqrt((b1 - b3) / (b1 - b2)),
        (1, 4): spec.g1,
        (2, 5): spec.g1,
        (3, 4): spec.g2 * lift,
        (3, 5): spec.g3 * lift,
    }
    for (a, b), g in bonds.items():
        couplings[a, b] = couplings[b, a] = g
    return MLZModel(n=6, slopes=slopes, offsets=offsets, couplings=couplings)


# ---------------------------------------------------------------------------
# Random instances


def random_two_band_spec(
    n: int,
    rng: np.random.Generator,
    lambdas: Sequence[int] | None = None,
    rho: int = 1,
) -> TwoBandSpec:
    """Random two-band spec with the sum rule closed exactly.

    Outer slope magnitudes are drawn in (1.2 b, 6 b) with both signs
    present, sorted descending; couplings are drawn uniformly and the last
    one on the sign side that admits a real solution is replaced by the
    sum-rule value.  ``lambdas`` fixes the offset sign pattern (random if
    omitted).  Slopes are kept pairwise separated by at least 0.25 so the
    crossing structure stays numerically resolvable (nearly parallel levels
    push crossings to huge times and gap scales below certification).
    """
    if n < 4:
        raise ModelError("two-band family needs at least four levels")
    m = n - 2
    b = float(rng.uniform(0.5, 2.0))
    for _ in range(200):
        n_pos = int(rng.integers(1, m))  # at least one of each sign
        mags = rng.uniform(1.2 * b, 6.0 * b, size=m)
        signs = np.array([1.0] * n_pos + [-1.0] * (m - n_pos))
        b_i = np.sort(mags * signs)[::-1]
        if np.min(np.abs(np.diff(np.sort(np.concatenate(([b, -b], b_i)))))) < 0.25:
            continue
        g1 = rng.uniform(0.05, 0.5, size=m)
        e = float(rng.uniform(0.3, 2.0))
        lam = rng.choice([-1, 1], size=m) if lambdas is None else np.asarray(lambdas)
        # the sum rule is solvable on exactly one slope side; try both
        for k in (_last_index(b_i < 0), _last_index(b_i > 0)):
            trial = g1.copy()
            trial[k] = np.nan
            spec = TwoBandSpec(n=n, b=b, b_i=b_i, g1_i=trial, e=e, lambda_i=lam, rho=rho)
            try:
                solved = solve_coupling_closure(spec)
            except ModelError:
                continue
            if solved < 1e-3:
                continue  # a (near) zero bond would change the coupling graph
            g1[k] = solved
            return TwoBandSpec(n=n, b=b, b_i=b_i, g1_i=g1, e=e, lambda_i=lam, rho=rho)
    raise ModelError("failed to draw a valid two-band spec")


def _last_index(mask: np.ndarray) -> int:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ModelError("slope signs are not mixed; sum rule cannot close")
    return int(idx[-1])


def random_bowtie_spec(n: int, rng: np.random.Generator) -> BowtieSpec:
    """Random balanced bowtie spec avoiding degenerate pullback slopes.

    Rejects draws with |beta_i| near 1/2 (outer pullback slope would collide
    with the central one) and near-coincident values of beta + 1/(4 beta).
    """
    if n < 4:
        raise ModelError("need at least two outer levels to balance the couplings")
    m = n - 2
    for _ in range(500):
        mags = rng.uniform(0.3, 3.0, size=m)
        if np.any(np.abs(mags - 0.5) < 0.08):
            continue
        n_pos = int(rng.integers(1, m))
        beta = mags * np.array([1.0] * n_pos + [-1.0] * (m - n_pos))
        pulled = beta + 0.25 / beta  # outer slopes at unit sweep speed
        if np.min(np.abs(np.diff(np.sort(pulled)))) < 1e-2:
            continue
        if np.min(np.abs(np.abs(pulled) - 1.0)) < 1e-2:
            continue
        gamma = rng.uniform(0.1, 1.0, size=m)
        kappa_partial = float(np.sum(gamma[:-1] ** 2 / beta[:-1]))
        # choose the solve slot so gamma^2 = -beta * kappa_partial is positive
        want_neg = kappa_partial > 0.0
        idx = np.flatnonzero((beta < 0.0) if want_neg else (beta > 0.0))
        if idx.size == 0:
            continue
        k = int(idx[-1])
        g_sq = -beta[k] * float(
            np.sum(np.delete(gamma, k) ** 2 / np.delete(beta, k))
        )
        if g_sq <= 1e-6:
            continue
        gamma[k] = math.sqrt(g_sq)
        return BowtieSpec(
            n=n,
            beta_i=beta,
            gamma_i=gamma,
            a=float(rng.uniform(0.5, 1.5)),
            e=float(rng.uniform(0.3, 1.5)),
        )
    raise ModelError("failed to draw a valid bowtie spec")
