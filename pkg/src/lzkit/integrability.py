"""Exact-solvability diagnostics for linear-sweep models.

Two independent conditions are checked on a model's crossing diagram:

* every closed loop of pairwise crossings encloses zero signed area in the
  (time, energy) plane, and
* every crossing between two *uncoupled* levels stays exact at second order
  in the couplings, i.e. the sum of two-step virtual transitions through
  levels coupled to both vanishes at the crossing point.

The module also hosts the commuting-family machinery: families of operators
``H_j(tau) = B_{kj} tau^k + A_j`` whose members commute for all parameter
values, the slope/offset/coupling data they induce on a straight sweep, and
the characteristic pair invariants (antisymmetric ``gamma`` matrix, scattering
phases of an isolated crossing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.special import loggamma

if TYPE_CHECKING:  # pragma: no cover
    from .model_core import MLZModel

__all__ = [
    "GammaMatrix",
    "MTLZFamily",
    "MTLZReport",
    "ICReport",
    "gamma_matrix",
    "shoelace_area",
    "check_ic1",
    "check_ic2_perturbative",
    "check_mtlz",
    "family_hamiltonian",
    "dynamical_phase",
    "stokes_phase",
    "ic_report",
]


@dataclass(frozen=True)
class GammaMatrix:
    """Antisymmetric pair-invariant matrix gamma[a,b] = g_ab^2 / (beta_a - beta_b)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("gamma matrix must be square")
        if not np.array_equal(v, -v.T):
            raise ValueError("gamma matrix must be exactly antisymmetric")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def gamma_matrix(model: MLZModel) -> GammaMatrix:
    """Pair invariants of all coupled pairs; zero where levels are uncoupled."""
    n = model.n
    out = np.zeros((n, n))
    for a, b in model.coupled_pairs():
        v = model.couplings[a, b] ** 2 / (model.slopes[a] - model.slopes[b])
        out[a, b] = v
        out[b, a] = -v
    return GammaMatrix(out)


def shoelace_area(vertices) -> float:
    """Signed area of a polygon given as an (k, 2) array of vertices."""
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise ValueError("need at least three (x, y) vertices")
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# ---------------------------------------------------------------------------
# Loop condition


def _fundamental_cycles(n: int, edges: list[tuple[int, int]]) -> list[tuple[int, ...]]:
    """Cycle basis of the coupling graph from a DFS spanning forest.

    Each returned cycle is a vertex tuple (closure edge implied between the
    last and first entries).  Deterministic: vertices and neighbours are
    visited in ascending order.
    """
    adj: dict[int, list[int]] = {v: [] for v in range(n)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    for v in adj:
        adj[v].sort()
    parent = {}
    depth = {}
    tree_edges = set()
    for root in range(n):
        if root in parent:
            continue
        parent[root] = root
        depth[root] = 0
        stack = [root]
        while stack:
            u = stack.pop()
            for w in reversed(adj[u]):
                if w not in parent:
                    parent[w] = u
                    depth[w] = depth[u] + 1
                    tree_edges.add((min(u, w), max(u, w)))
                    stack.append(w)
    cycles = []
    for a, b in edges:
        if (min(a, b), max(a, b)) in tree_edges:
            continue
        # walk both endpoints up to their lowest common ancestor
        pa, pb = [a], [b]
        u, w = a, b
        while depth[u] > depth[w]:
            u = parent[u]
            pa.append(u)
        while depth[w] > depth[u]:
            w = parent[w]
            pb.append(w)
        while u != w:
            u = parent[u]
            w = parent[w]
            pa.append(u)
            pb.append(w)
        # pa ends at the LCA, pb likewise; join a -> ... -> lca -> ... -> b
        cycles.append(tuple(pa + pb[-2::-1]))
    return cycles


def _link_phase(model: MLZModel, u: int, v: int) -> float:
    """Triangle area term (e_v - e_u)^2 / (2 (beta_v - beta_u)) of a bond."""
    db = model.slopes[v] - model.slopes[u]
    if db == 0.0:
        from .model_core import ModelError

        raise ModelError(f"levels {u} and {v} are parallel; bond phase undefined")
    de = model.offsets[v] - model.offsets[u]
    return float(de * de / (2.0 * db))


def check_ic1(model: MLZModel) -> list[tuple[tuple[int, ...], float]]:
    """Signed enclosed area of every fundamental loop of the coupling graph.

    For a loop (r_1, ..., r_k) the area is accumulated bond by bond in a
    consistent orientation, ``sum_j (e_{r_{j+1}} - e_{r_j})^2 / (2 (b_{r_{j+1}}
    - b_{r_j}))`` with indices cyclic; it equals minus the shoelace area of
    the polygon of pairwise crossing points and vanishes exactly on solvable
    models.  Returns ``[(cycle, area), ...]`` over a fundamental cycle basis.
    """
    cycles = _fundamental_cycles(model.n, model.coupled_pairs())
    out = []
    for cyc in cycles:
        area = sum(
            _link_phase(model, cyc[j], cyc[(j + 1) % len(cyc)])
            for j in range(len(cyc))
        )
        out.append((cyc, area))
    return out


# ---------------------------------------------------------------------------
# Second-order crossing condition


def check_ic2_perturbative(model: MLZModel) -> list[tuple[tuple[int, int], float]]:
    """Second-order level-repulsion balance at every uncoupled crossing.

    For each pair (a, b) with zero direct coupling and distinct slopes,
    evaluates at their crossing time the sum over levels c coupled to both of
    ``A_ac A_cb / (E_x - E_c)`` where ``E_x`` is the shared diabatic energy of
    the crossing pair.  The result is normalised by the largest contributing
    term, so a residual of zero means the exact crossing survives weak
    coupling.  Pairs with no two-step route contribute residual 0.
    """
    from .model_core import ModelError

    out = []
    scale_e = float(
        np.max(np.abs(model.offsets), initial=0.0)
        + np.max(np.abs(model.slopes)) * 1.0
    )
    for a in range(model.n):
        for b in range(a + 1, model.n):
            if model.couplings[a, b] != 0.0:
                continue
            if model.slopes[a] == model.slopes[b]:
                continue  # parallel levels never cross
            t = model.crossing_time(a, b)
            e_x = 0.5 * (
                model.slopes[a] * t
                + model.offsets[a]
                + model.slopes[b] * t
                + model.offsets[b]
            )
            terms = []
            for c in range(model.n):
                if c in (a, b):
                    continue
                gac = model.couplings[a, c]
                gcb = model.couplings[c, b]
                if gac == 0.0 or gcb == 0.0:
                    continue
                den = e_x - (model.slopes[c] * t + model.offsets[c])
                if abs(den) < 1e-12 * max(1.0, scale_e, abs(e_x)):
                    raise ModelError(
                        f"levels ({a},{b}) cross on top of level {c}; "
                        "second-order test is singular there"
                    )
                terms.append(gac * gcb / den)
            if terms:
                largest = max(abs(x) for x in terms)
                resid = abs(sum(terms)) / largest if largest > 0.0 else 0.0
            else:
                resid = 0.0
            out.append(((a, b), resid))
    return out


# ---------------------------------------------------------------------------
# Commuting families


@dataclass(frozen=True)
class MTLZFamily:
    """Family of operators H_j(tau) = B_{kj} tau^k + A_j, j = 0..M.

    ``B`` has shape (M+1, M+1, N, N) with each slice a real symmetric matrix,
    ``A`` has shape (M+1, N, N) with real symmetric zero-diagonal slices.
    ``Lambda[a, k, j]`` holds the slope of level ``a`` in the common diabatic
    basis (eigenbasis of the span of the ``B`` slices); ``basis`` holds that
    basis column-wise.  When every ``B`` slice is diagonal the basis is the
    identity and ``Lambda[a, k, j] = B[k, j, a, a]``.
    """

    m_plus_1: int
    B: np.ndarray
    A: np.ndarray
    Lambda: np.ndarray = None  # derived
    basis: np.ndarray = None  # derived

    def __post_init__(self):
        mp1 = self.m_plus_1
        B = np.asarray(self.B, dtype=float)
        A = np.asarray(self.A, dtype=float)
        if B.ndim != 4 or B.shape[:2] != (mp1, mp1) or B.shape[2] != B.shape[3]:
            raise ValueError(f"B must have shape ({mp1}, {mp1}, N, N)")
        n = B.shape[2]
        if A.shape != (mp1, n, n):
            raise ValueError(f"A must have shape ({mp1}, {n}, {n})")
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(A))):
            raise ValueError("family matrices contain non-finite entries")
        for k in range(mp1):
            for j in range(mp1):
                if not np.array_equal(B[k, j], B[k, j].T):
                    raise ValueError(f"B[{k},{j}] must be a symmetric matrix")
        for j in range(mp1):
            if not np.array_equal(A[j], A[j].T):
                raise ValueError(f"A[{j}] must be a symmetric matrix")
            if np.any(np.diagonal(A[j]) != 0.0):
                raise ValueError(f"A[{j}] must have zero diagonal")
        offdiag = B - B * np.eye(n)
        if np.all(offdiag == 0.0):
            basis = np.eye(n)
            lam = np.transpose(np.diagonal(B, axis1=2, axis2=3), (2, 0, 1))
        else:
            # generic mixture breaks accidental degeneracies deterministically
            w = np.cos(1.0 + np.arange(mp1 * mp1, dtype=float)).reshape(mp1, mp1)
            _, basis = np.linalg.eigh(np.einsum("kjab,kj->ab", B, w))
            lam = np.einsum("ia,kjim,ma->akj", basis, B, basis)
        object.__setattr__(self, "B", _ro(B))
        object.__setattr__(self, "A", _ro(A))
        object.__setattr__(self, "Lambda", _ro(np.ascontiguousarray(lam)))
        object.__setattr__(self, "basis", _ro(basis))

    @property
    def n(self) -> int:
        return self.B.shape[2]

    def couplings_diabatic(self) -> np.ndarray:
        """A slices rotated into the common diabatic basis, shape (M+1, N, N)."""
        if np.array_equal(self.basis, np.eye(self.n)):
            return np.asarray(self.A)
        return np.einsum("ia,jim,mb->jab", self.basis, self.A, self.basis)


def _ro(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def family_hamiltonian(family: MTLZFamily, j: int, tau) -> np.ndarray:
    """Member H_j of the family evaluated at parameter point tau."""
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (family.m_plus_1,):
        raise ValueError(f"tau must have shape ({family.m_plus_1},)")
    return np.einsum("kab,k->ab", family.B[:, j], tau) + family.A[j]


@dataclass(frozen=True)
class MTLZReport:
    """Normalised residuals of the commuting-family conditions.

    Every entry is scaled so that ``< tol`` means the condition holds; the
    ``gamma`` attribute carries the pair invariants recovered from the slope
    differences (NaN where a pair is uncoupled).
    """

    index_symmetry: float
    b_commutators: float
    mixed_commutators: float
    a_commutators: float
    gamma_relation: float
    gamma: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        worst = max(
            self.index_symmetry,
            self.b_commutators,
            self.mixed_commutators,
            self.a_commutators,
            self.gamma_relation,
        )
        return bool(worst < self.tol)


def check_mtlz(family: MTLZFamily, tol: float = 1e-10) -> MTLZReport:
    """Verify the algebraic conditions that make a family commute everywhere.

    Checks symmetry of ``B`` under swap of its two parameter indices, mutual
    commutation of all ``B`` slices, the mixed condition
    ``[B_sj, A_k] = [B_sk, A_j]``, mutual commutation of the ``A`` slices, and
    consistency of the pair invariants: for every coupled pair (a, b) a single
    constant ``gamma_ab`` must satisfy
    ``gamma_ab (Lambda^a_kj - Lambda^b_kj) = A_k^ab A_j^ab`` for all k, j.
    All residuals are relative to the natural scale of the matrices involved.
    """
    mp1, n = family.m_plus_1, family.n
    B, A = np.asarray(family.B), np.asarray(family.A)
    scale_b = max(float(np.max(np.abs(B))), 1e-300)
    scale_a = max(float(np.max(np.abs(A))), 1e-300)

    sym = max(
        float(np.max(np.abs(B[k, j] - B[j, k])))
        for k in range(mp1)
        for j in range(mp1)
    ) / scale_b

    def comm(x, y):
        return x @ y - y @ x

    bb = 0.0
    for k in range(mp1):
        for j in range(mp1):
            for l in range(mp1):
                for m in range(mp1):
                    bb = max(bb, float(np.max(np.abs(comm(B[k, j], B[l, m])))))
    bb /= scale_b * scale_b

    mixed = 0.0
    for s in range(mp1):
        for j in range(mp1):
            for k in range(mp1):
                r = comm(B[s, j], A[k]) - comm(B[s, k], A[j])
                mixed = max(mixed, float(np.max(np.abs(r))))
    mixed /= scale_b * scale_a

    aa = max(
        float(np.max(np.abs(comm(A[j], A[k]))))
        for j in range(mp1)
        for k in range(mp1)
    ) / (scale_a * scale_a)

    couplings = family.couplings_diabatic()
    lam = np.asarray(family.Lambda)
    gamma = np.full((n, n), np.nan)
    gamma_resid = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            rhs = couplings[:, a, b][:, None] * couplings[:, a, b][None, :]
            if np.all(rhs == 0.0):
                continue
            d = lam[a] - lam[b]
            denom = float(np.sum(d * d))
            if denom == 0.0:
                gamma_resid = max(gamma_resid, 1.0)  # coupled pair, flat slopes
                continue
            g = float(np.sum(d * rhs)) / denom
            gamma[a, b] = g
            gamma[b, a] = -g
            resid = float(np.max(np.abs(g * d - rhs)))
            gamma_resid = max(
                gamma_resid,
                resid / max(float(np.max(np.abs(rhs))), abs(g) * float(np.max(np.abs(d)))),
            )
    return MTLZReport(
        index_symmetry=sym,
        b_commutators=bb,
        mixed_commutators=mixed,
        a_commutators=aa,
        gamma_relation=gamma_resid,
        gamma=_ro(gamma),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# Phases


def dynamical_phase(
    model: MLZModel, a: int, c: int, chain: Sequence[int] | None = None
) -> float:
    """Semiclassical phase accumulated between levels c and a.

    With ``chain=None`` the direct bond value ``(e_a - e_c)^2 / (2 (b_a - b_c))``
    is returned (the pair must be coupled).  Otherwise ``chain`` must be the
    full route ``(c, d_1, ..., d_k, a)`` along coupled bonds and the bond
    values are summed with every bond oriented toward ``a``.  On solvable
    models the result is route-independent.
    """
    from .model_core import ModelError

    if chain is None:
        chain = (c, a)
    chain = tuple(int(x) for x in chain)
    if len(chain) < 2 or chain[0] != c or chain[-1] != a:
        raise ModelError("chain must run from c to a")
    total = 0.0
    for u, v in zip(chain[:-1], chain[1:]):
        if model.couplings[u, v] == 0.0:
            raise ModelError(f"chain link ({u}, {v}) is uncoupled")
        total += _link_phase(model, u, v)
    return total


def stokes_phase(gamma: float) -> tuple[float, float]:
    """Scattering phases of an isolated crossing with pair invariant gamma.

    Returns the pair ``(phi_plus, phi_minus)`` with
    ``phi_pm = pm sign(gamma) * (pi/4 - arg GammaFn(-i |gamma|))``.
    Zero at gamma = 0 by the sign convention (the one-sided limits are
    -+ pi/4).
    """
    if gamma == 0.0:
        return (0.0, 0.0)
    mag = abs(float(gamma))
    phi = math.pi / 4.0 - float(np.imag(loggamma(complex(0.0, -mag))))
    val = phi if gamma > 0.0 else -phi
    return (val, -val)


# ---------------------------------------------------------------------------
# Aggregate report


@dataclass(frozen=True)
class ICReport:
    """Joint result of the loop-area and second-order crossing checks."""

    loop_areas: tuple
    perturbative_residuals: tuple
    gamma: GammaMatrix
    verdicts: dict
    flags: tuple

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_json(self) -> dict:
        """JSON-serialisable summary; level indices are 1-based."""
        return {
            "loop_areas": [
                {"cycle": [v + 1 for v in cyc], "area": area}
                for cyc, area in self.loop_areas
            ],
            "crossing_residuals": [
                {"pair": [a + 1, b + 1], "residual": r}
                for (a, b), r in self.perturbative_residuals
            ],
            "verdicts": dict(self.verdicts),
            "flags": list(self.flags),
        }


def ic_report(
    model: MLZModel, loop_tol: float = 1e-10, crossing_tol: float = 1e-9
) -> ICReport:
    """Run both solvability checks on a model and bundle the outcome.

    Loop areas are judged relative to the largest bond term of each loop;
    crossing residuals are already normalised.  Flags note degenerate inputs
    that keep the checks trivially true (e.g. all offsets zero, which merges
    every crossing at t = 0).
    """
    areas = check_ic1(model)
    verdict_loops = True
    for cyc, area in areas:
        scale = max(
            abs(_link_phase(model, cyc[j], cyc[(j + 1) % len(cyc)]))
            for j in range(len(cyc))
        )
        if abs(area) > loop_tol * max(scale, 1e-300):
            verdict_loops = False
    residuals = check_ic2_perturbative(model)
    verdict_cross = all(r <= crossing_tol for _, r in residuals)
    flags = []
    if np.all(np.asarray(model.offsets) == 0.0):
        flags.append("all-offsets-zero")
    times = sorted(
        model.crossing_time(a, b)
        for a in range(model.n)
        for b in range(a + 1, model.n)
        if model.slopes[a] != model.slopes[b]
    )
    span = max(1.0, times[-1] - times[0]) if times else 1.0
    if any(t2 - t1 < 1e-9 * span for t1, t2 in zip(times, times[1:])):
        flags.append("coincident-crossings")
    return ICReport(
        loop_areas=tuple(areas),
        perturbative_residuals=tuple(residuals),
        gamma=gamma_matrix(model),
        verdicts={"loop_areas": verdict_loops, "crossing_conditions": verdict_cross},
        flags=tuple(flags),
    )
