"""Transition probabilities from crossing-by-crossing path sums.

For models whose pairwise crossings are well separated, the scattering matrix
factorises over the chronologically ordered crossings: passing a crossing of
levels (a, b) multiplies the amplitude by ``sqrt(p)`` to stay on the current
diabatic level or by ``i * sign(g) * sqrt(1 - p)`` to switch, where
``p = exp(-2 pi g^2 / |beta_a - beta_b|)`` is the pairwise survival
probability.  Three routes to the transition matrix live here:

* :func:`enumerate_paths` / :func:`path_amplitude` — explicit trajectory sums,
* :func:`semiclassical_matrix` — the same sum folded level-by-level,
* :func:`scattering_product` — an ordered product of one-crossing matrices.

They must agree to machine precision; keeping all three makes that a real
cross-check rather than a tautology.  Closed-form reference matrices for the
solvable five/six/ten-level sign regimes are in :func:`closed_form_oracle`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .model_core import MLZModel, ModelError, lz_probability

__all__ = [
    "Crossing",
    "DiabaticDiagram",
    "Trajectory",
    "TransitionMatrix",
    "PathExplosionError",
    "AmbiguousOrderError",
    "build_diagram",
    "enumerate_paths",
    "path_amplitude",
    "semiclassical_matrix",
    "scattering_product",
    "closed_form_oracle",
    "five_level_phase",
    "ORACLE_CASES",
]

#: Relative tolerance (on the crossing-time span) below which two crossing
#: times count as simultaneous.
TIE_RTOL = 1e-9


class PathExplosionError(RuntimeError):
    """Raised when trajectory enumeration exceeds its path budget."""


class AmbiguousOrderError(ModelError):
    """Raised when simultaneous crossings share a level, so no chronological
    ordering of one-crossing factors is well defined."""


@dataclass(frozen=True)
class Crossing:
    """One pairwise diabatic crossing.

    ``pair`` is (a, b) with a < b; ``p`` is the survival probability,
    ``q = 1 - p``; ``sign`` is the sign of the direct coupling.
    """

    pair: tuple[int, int]
    time: float
    coupling: float
    p: float
    q: float
    sign: int


@dataclass(frozen=True)
class DiabaticDiagram:
    """Chronologically ordered crossings of a model.

    ``groups`` partitions crossing indices into simultaneity groups (ties
    within :data:`TIE_RTOL` of the time span).  Within a group the crossings
    are kept in lexicographic pair order; that order only matters when the
    group shares a level, which :func:`build_diagram` flags.
    """

    n: int
    crossings: tuple[Crossing, ...]
    groups: tuple[tuple[int, ...], ...]

    def shared_level_groups(self) -> list[tuple[int, ...]]:
        """Simultaneity groups whose crossings are not pairwise disjoint."""
        bad = []
        for grp in self.groups:
            if len(grp) < 2:
                continue
            seen: set[int] = set()
            for k in grp:
                a, b = self.crossings[k].pair
                if a in seen or b in seen:
                    bad.append(grp)
                    break
                seen.update((a, b))
        return bad


def build_diagram(model: MLZModel) -> DiabaticDiagram:
    """Crossing sequence of a model, sorted by time then by pair.

    Every coupled pair contributes one crossing (coupled pairs with equal
    slopes are already rejected by the model type).  Simultaneous crossings
    are grouped; they commute iff they touch disjoint level pairs, which is
    the only case the amplitude rules below accept.
    """
    records = []
    for a, b in model.coupled_pairs():
        g = float(model.couplings[a, b])
        p = lz_probability(g, model.slopes[a], model.slopes[b])
        records.append(
            Crossing(
                pair=(a, b),
                time=model.crossing_time(a, b),
                coupling=g,
                p=p,
                q=1.0 - p,
                sign=int(np.sign(g)),
            )
        )
    records.sort(key=lambda c: (c.time, c.pair))
    groups: list[tuple[int, ...]] = []
    if records:
        span = max(1.0, records[-1].time - records[0].time)
        start = 0
        for k in range(1, len(records) + 1):
            if (
                k == len(records)
                or records[k].time - records[k - 1].time > TIE_RTOL * span
            ):
                groups.append(tuple(range(start, k)))
                start = k
    return DiabaticDiagram(n=model.n, crossings=tuple(records), groups=tuple(groups))


def _require_orderable(diagram: DiabaticDiagram) -> None:
    bad = diagram.shared_level_groups()
    if bad:
        pairs = [[diagram.crossings[k].pair for k in grp] for grp in bad]
        raise AmbiguousOrderError(
            f"simultaneous crossings share a level: {pairs}; "
            "no chronological factor order exists"
        )


@dataclass(frozen=True)
class Trajectory:
    """One diabatic path: the level occupied after each crossing decision.

    ``decisions`` lists (crossing index, 'stay' | 'switch') for the crossings
    where the occupied level was involved; ``levels`` is the occupancy after
    each decision, starting from ``source``.
    """

    source: int
    target: int
    decisions: tuple[tuple[int, str], ...]
    levels: tuple[int, ...]


def enumerate_paths(
    diagram: DiabaticDiagram, source: int, target: int, max_paths: int = 10**6
) -> list[Trajectory]:
    """All diabatic trajectories from ``source`` to ``target``.

    Walks the crossing sequence forward in time; at each crossing involving
    the occupied level the path forks into stay/switch.  Raises
    :class:`PathExplosionError` beyond ``max_paths`` completed paths.
    """
    _require_orderable(diagram)
    out: list[Trajectory] = []
    # stack of (crossing index, level, decisions, levels)
    stack: list[tuple[int, int, tuple, tuple]] = [(0, source, (), (source,))]
    K = len(diagram.crossings)
    while stack:
        k, level, decisions, levels = stack.pop()
        if k == K:
            if level == target:
                out.append(
                    Trajectory(
                        source=source,
                        target=target,
                        decisions=decisions,
                        levels=levels,
                    )
                )
                if len(out) > max_paths:
                    raise PathExplosionError(
                        f"more than {max_paths} trajectories from {source} to {target}"
                    )
            continue
        a, b = diagram.crossings[k].pair
        if level != a and level != b:
            stack.append((k + 1, level, decisions, levels))
            continue
        other = b if level == a else a
        # explored LIFO: push switch first so 'stay' is expanded first
        stack.append(
            (k + 1, other, decisions + ((k, "switch"),), levels + (other,))
        )
        stack.append((k + 1, level, decisions + ((k, "stay"),), levels + (level,)))
    return out


def path_amplitude(diagram: DiabaticDiagram, trajectory: Trajectory) -> complex:
    """Product of stay/switch factors along one trajectory."""
    amp = 1.0 + 0.0j
    for k, what in trajectory.decisions:
        c = diagram.crossings[k]
        if what == "stay":
            amp *= math.sqrt(c.p)
        elif what == "switch":
            amp *= 1j * c.sign * math.sqrt(c.q)
        else:
            raise ValueError(f"unknown decision {what!r}")
    return amp


@dataclass(frozen=True)
class TransitionMatrix:
    """Matrix of transition probabilities; ``values[a, b]`` is the probability
    of ending on level a having started on level b.  Entries may be NaN in
    partially specified reference matrices."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("transition matrix must be square")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def validate(self, tol: float) -> None:
        """Check double stochasticity: all rows and columns sum to 1 within
        ``tol`` and entries lie in [0, 1] (rows/columns with NaN are skipped)."""
        v = self.values
        finite = np.isfinite(v)
        if np.any((v[finite] < -tol) | (v[finite] > 1.0 + tol)):
            raise ValueError("probabilities outside [0, 1]")
        for axis, name in ((0, "column"), (1, "row")):
            sums = np.sum(v, axis=axis)
            for k, s in enumerate(sums):
                if math.isnan(s):
                    continue
                if abs(s - 1.0) > tol:
                    raise ValueError(
                        f"{name} {k} sums to {s!r}, off by {abs(s - 1.0):.3e}"
                    )

    def max_difference(self, other: "TransitionMatrix | np.ndarray") -> float:
        """Largest |difference| over entries where both matrices are finite."""
        o = other.values if isinstance(other, TransitionMatrix) else np.asarray(other)
        both = np.isfinite(self.values) & np.isfinite(o)
        if not np.any(both):
            return 0.0
        return float(np.max(np.abs(self.values[both] - o[both])))


def semiclassical_matrix(model_or_diagram) -> TransitionMatrix:
    """Transition matrix from the crossing-by-crossing amplitude sum.

    Folds the stay/switch rules through the crossing sequence for each start
    level, which sums all trajectories implicitly.  The result of a valid
    diagram is doubly stochastic to ~1e-15; this is asserted at 1e-12.
    """
    diagram = (
        model_or_diagram
        if isinstance(model_or_diagram, DiabaticDiagram)
        else build_diagram(model_or_diagram)
    )
    _require_orderable(diagram)
    n = diagram.n
    P = np.empty((n, n))
    for src in range(n):
        amp = np.zeros(n, dtype=complex)
        amp[src] = 1.0
        for c in diagram.crossings:
            a, b = c.pair
            va, vb = amp[a], amp[b]
            stay = math.sqrt(c.p)
            switch = 1j * c.sign * math.sqrt(c.q)
            amp[a] = stay * va + switch * vb
            amp[b] = switch * va + stay * vb
        P[:, src] = np.abs(amp) ** 2
    out = TransitionMatrix(P)
    out.validate(1e-12)
    return out


def scattering_product(model_or_diagram) -> TransitionMatrix:
    """Transition matrix from an ordered product of one-crossing matrices.

    Each crossing contributes an N x N unitary equal to the identity outside
    the 2 x 2 block ``[[sqrt(p), i s sqrt(q)], [i s sqrt(q), sqrt(p)]]`` on
    its level pair; factors are applied in chronological order.
    """
    diagram = (
        model_or_diagram
        if isinstance(model_or_diagram, DiabaticDiagram)
        else build_diagram(model_or_diagram)
    )
    _require_orderable(diagram)
    n = diagram.n
    S = np.eye(n, dtype=complex)
    for c in diagram.crossings:
        a, b = c.pair
        F = np.eye(n, dtype=complex)
        F[a, a] = F[b, b] = math.sqrt(c.p)
        F[a, b] = F[b, a] = 1j * c.sign * math.sqrt(c.q)
        S = F @ S
    out = TransitionMatrix(np.abs(S) ** 2)
    out.validate(1e-12)
    return out


# ---------------------------------------------------------------------------
# Closed-form reference matrices


ORACLE_CASES = (
    "five_phase1",
    "five_phase2a",
    "five_phase2b",
    "five_phase3",
    "six_partial",
    "ten_partial",
)

#: Offset sign patterns of the five-level family, keyed by (l3, l4, l5) for
#: outer slopes sorted b3 > b4 > 0 > b5.  Patterns come in +-.pairs because a
#: global sign flip of all offsets reverses time, which leaves the
#: probabilities invariant.
_FIVE_PHASES = {
    (1, 1, 1): "five_phase1",
    (-1, -1, -1): "five_phase1",
    (-1, 1, 1): "five_phase2a",
    (1, -1, -1): "five_phase2a",
    (1, -1, 1): "five_phase2b",
    (-1, 1, -1): "five_phase2b",
    (1, 1, -1): "five_phase3",
    (-1, -1, 1): "five_phase3",
}


def five_level_phase(lambda_i) -> str:
    """Oracle case name for a five-level sign pattern (slopes sorted
    b3 > b4 > 0 > b5)."""
    key = tuple(int(x) for x in lambda_i)
    try:
        return _FIVE_PHASES[key]
    except KeyError:
        raise ModelError(f"not a five-level sign pattern: {lambda_i}") from None


def closed_form_oracle(case: str, p) -> TransitionMatrix:
    """Closed-form transition matrices of the solvable sign regimes.

    Parameters
    ----------
    case : str
        One of :data:`ORACLE_CASES`.  The ``five_*`` cases take
        ``p = (p3, p4)`` (the third survival probability is fixed by the
        slope-balance constraint to ``p3 * p4``; passing a third entry is
        allowed and validated).  ``six_partial`` takes ``(p3, p4, p5, p6)``
        with ``p5 * p6 = p3 * p4`` and fixes rows/columns 1 and 3;
        ``ten_partial`` takes ``(p3, ..., p10)`` with
        ``p3 p4 p5 p6 p7 = p8 p9 p10`` and fixes row/column 1.  Entries not
        determined by the closed form are NaN.
    """
    p = [float(x) for x in np.atleast_1d(np.asarray(p, dtype=float))]
    if any(not (0.0 <= x <= 1.0) for x in p):
        raise ModelError("survival probabilities must lie in [0, 1]")
    if case.startswith("five"):
        if len(p) == 2:
            p3, p4 = p
            p5 = p3 * p4
        elif len(p) == 3:
            p3, p4, p5 = p
            if abs(p5 - p3 * p4) > 1e-12:
                raise ModelError("five-level regime requires p5 = p3 * p4")
        else:
            raise ModelError("five-level cases take (p3, p4) or (p3, p4, p5)")
        q3, q4, q5 = 1.0 - p3, 1.0 - p4, 1.0 - p5
        if case == "five_phase1":
            rows = [
                [p3**2 * p4**2, 0, p3 * p4 * q3, p3**2 * p4 * q4, q5],
                [0, p3**2 * p4**2, q3, p3 * q4, p3 * p4 * q5],
                [p3 * p4 * q3, q3, p3**2, p3 * q3 * q4, 0],
                [p3**2 * p4 * q4, p3 * q4, p3 * q3 * q4, (p4 + q3 * q4) ** 2, 0],
                [q5, p3 * p4 * q5, 0, 0, p3**2 * p4**2],
            ]
        elif case == "five_phase2a":
            rows = [
                [(p3 * p4 - q3 * q4) ** 2, p4 * q3**2, p3 * q3, p4 * q4, p3 * q5],
                [p4 * q3**2, p3**2 * p4**2, p3 * p4 * q3, q4, p3 * p4 * q5],
                [p3 * q3, p3 * p4 * q3, p3**2, 0, q3 * q5],
                [p4 * q4, q4, 0, p4**2, 0],
                [p3 * q5, p3 * p4 * q5, q3 * q5, 0, p3**2 * p4**2],
            ]
        elif case == "five_phase2b":
            rows = [
                [(p3 * p4 - q3 * q4) ** 2, p3 * q4**2, p3 * q3, p4 * q4, p4 * q5],
                [p3 * q4**2, p3**2 * p4**2, q3, p3 * p4 * q4, p3 * p4 * q5],
                [p3 * q3, q3, p3**2, 0, 0],
                [p4 * q4, p3 * p4 * q4, 0, p4**2, q4 * q5],
                [p4 * q5, p3 * p4 * q5, 0, q4 * q5, p3**2 * p4**2],
            ]
        elif case == "five_phase3":
            rows = [
                [p3**2 * p4**2, q5**2, p3 * p4 * q3, p3**2 * p4 * q4, p3 * p4 * q5],
                [q5**2, p3**2 * p4**2, p3 * p4 * q3, p3**2 * p4 * q4, p3 * p4 * q5],
                [p3 * p4 * q3, p3 * p4 * q3, p3**2, p3 * q3 * q4, q3 * q5],
                [
                    p3**2 * p4 * q4,
                    p3**2 * p4 * q4,
                    p3 * q3 * q4,
                    (p4 + q3 * q4) ** 2,
                    p3 * q4 * q5,
                ],
                [p3 * p4 * q5, p3 * p4 * q5, q3 * q5, p3 * q4 * q5, p3**2 * p4**2],
            ]
        else:
            raise ModelError(f"unknown oracle case {case!r}")
        return TransitionMatrix(np.array(rows))
    if case == "six_partial":
        if len(p) != 4:
            raise ModelError("six_partial takes (p3, p4, p5, p6)")
        p3, p4, p5, p6 = p
        if abs(p5 * p6 - p3 * p4) > 1e-12:
            raise ModelError("six-level regime requires p5 * p6 = p3 * p4")
        q3, q4, q5, q6 = (1.0 - x for x in p)
        v = np.full((6, 6), np.nan)
        row1 = [
            (p3 * p4 - q3 * q4) ** 2,
            p4 * q3**2,
            p3 * q3,
            p4 * q4,
            p3 * p6 * q5,
            p3 * q6,
        ]
        row3 = [p3 * q3, p3 * p4 * q3, p3**2, 0, p6 * q3 * q5, q3 * q6]
        v[0, :] = row1
        v[:, 0] = row1
        v[2, :] = row3
        v[:, 2] = row3
        return TransitionMatrix(v)
    if case == "ten_partial":
        if len(p) != 8:
            raise ModelError("ten_partial takes (p3, ..., p10)")
        p3, p4, p5, p6, p7, p8, p9, p10 = p
        if abs(p3 * p4 * p5 * p6 * p7 - p8 * p9 * p10) > 1e-12:
            raise ModelError(
                "ten-level regime requires p3 p4 p5 p6 p7 = p8 p9 p10"
            )
        q = [1.0 - x for x in p]
        q3, q4, q5, q6, q7, q8, q9, q10 = q
        v = np.full((10, 10), np.nan)
        row1 = [
            p3 * p4 * p5 * p6 * p7 * p8 * p9 * p10,
            0,
            p8 * p9 * p10 * q3,
            p3 * p8 * p9 * p10 * q4,
            p3 * p4 * p8 * p9 * p10 * q5,
            p3 * p4 * p5 * p8 * p9 * p10 * q6,
            p3 * p4 * p5 * p6 * p8 * p9 * p10 * q7,
            p9 * p10 * q8,
            p10 * q9,
            q10,
        ]
        v[0, :] = row1
        v[:, 0] = row1
        return TransitionMatrix(v)
    raise ModelError(f"unknown oracle case {case!r}; choose from {ORACLE_CASES}")
