"""Direct numerical time evolution of linear-sweep models.

The default method works in the rotating (interaction) frame of the diagonal
sweep, where the off-diagonal entries oscillate as ``exp(i (dbeta t^2 / 2
+ de t))``.  Over each step the frame Hamiltonian is replaced by its exact
time average — the chirped phase integrates in closed form through Fresnel
functions — and the step propagator is the exponential of that average.  A
fourth-order accurate variant composes each step from five such averages
with standard composition coefficients; the plain ``rk4`` method integrates
the Schroedinger equation in the fixed frame and serves as an independent
cross-check on short windows (it needs tiny steps once ``|H| * t`` is
large).

Everything here is deterministic; given the same model and config the
resulting matrices are bit-identical run to run.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import fresnel

from .model_core import MLZModel, ModelError, hamiltonian_at
from .semiclassics import TransitionMatrix

__all__ = [
    "PropagationConfig",
    "AccuracyError",
    "SweepResult",
    "SweepRow",
    "propagate",
    "propagator_matrix",
    "numeric_transition_matrix",
    "sweep",
]

#: Composition coefficients: each entry maps an order to the list of
#: sub-step fractions whose exponential-average steps compose to that order.
_SUZUKI_P = 1.0 / (4.0 - 4.0 ** (1.0 / 3.0))
_STAGES = {
    2: (1.0,),
    4: (_SUZUKI_P, _SUZUKI_P, 1.0 - 4.0 * _SUZUKI_P, _SUZUKI_P, _SUZUKI_P),
}

#: Tolerated drift of state-vector norms before the run is declared invalid.
NORM_DRIFT_TOL = 1e-6

#: Rotating-frame phase rate |d theta / dt| beyond which a level pair counts
#: as asymptotic: outside the band where some pair oscillates slower than
#: this, the evolution is handled by closed-form boundary maps instead of
#: stepping (see _tail_map).
OMEGA_MIN = 40.0


class AccuracyError(RuntimeError):
    """Raised when a numerical run fails its own accuracy safeguards."""


@dataclass(frozen=True)
class PropagationConfig:
    """Time window, step and method of a numerical run.

    ``initial`` is either a level index or a normalised complex vector.
    ``method`` is ``"interaction"`` (rotating-frame averages, order set by
    ``order``) or ``"rk4"`` (fixed-frame Runge-Kutta; use small windows).
    """

    t_start: float = -500.0
    t_end: float = 500.0
    dt: float = 0.005
    method: str = "interaction"
    order: int = 4
    initial: int | np.ndarray = 0

    def __post_init__(self):
        if not (self.t_end > self.t_start):
            raise ModelError("need t_end > t_start")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ModelError("dt must be positive")
        if self.method not in ("interaction", "rk4"):
            raise ModelError(f"unknown method {self.method!r}")
        if self.method == "interaction" and self.order not in _STAGES:
            raise ModelError(f"order must be one of {sorted(_STAGES)}")

    def edges(self) -> np.ndarray:
        """Step boundaries covering [t_start, t_end]; the last step may be short."""
        k = int(math.ceil((self.t_end - self.t_start) / self.dt - 1e-12))
        e = self.t_start + self.dt * np.arange(k + 1)
        e[-1] = self.t_end
        return e

    def initial_vector(self, n: int) -> np.ndarray:
        if isinstance(self.initial, (int, np.integer)):
            if not 0 <= self.initial < n:
                raise ModelError(f"initial level {self.initial} out of range")
            v = np.zeros(n, dtype=complex)
            v[self.initial] = 1.0
            return v
        v = np.asarray(self.initial, dtype=complex)
        if v.shape != (n,):
            raise ModelError(f"initial vector must have shape ({n},)")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ModelError("initial vector must be normalised")
        return v.copy()


# ---------------------------------------------------------------------------
# Exact step averages in the rotating frame


def _chirp_integral(alpha: float, beta: float, t0: np.ndarray, t1: np.ndarray):
    """Integrals of exp(i (alpha s^2 + beta s)) over each interval [t0, t1].

    Closed form via Fresnel functions for alpha != 0; the degenerate straight
    cases fall back to elementary antiderivatives.  Vectorised over interval
    arrays of equal shape.
    """
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    if alpha == 0.0:
        if beta == 0.0:
            return (t1 - t0).astype(complex)
        return (np.exp(1j * beta * t1) - np.exp(1j * beta * t0)) / (1j * beta)
    if alpha < 0.0:
        return np.conj(_chirp_integral(-alpha, -beta, t0, t1))
    c = beta / (2.0 * alpha)
    scale = math.sqrt(2.0 * alpha / math.pi)
    s0, c0 = fresnel(scale * (t0 + c))
    s1, c1 = fresnel(scale * (t1 + c))
    rot = np.exp(-1j * beta * beta / (4.0 * alpha)) * math.sqrt(
        math.pi / (2.0 * alpha)
    )
    return rot * ((c1 - c0) + 1j * (s1 - s0))


def _frame_averages(model: MLZModel, t0: np.ndarray, t1: np.ndarray) -> np.ndarray:
    """Stack of integrals of the rotating-frame Hamiltonian over intervals.

    Entry (a, b) of the frame Hamiltonian is ``g_ab exp(i theta_ab(t))`` with
    ``theta_ab = (beta_a - beta_b) t^2 / 2 + (e_a - e_b) t``; the diagonal
    vanishes.  Returns Hermitian matrices of shape (K, n, n).
    """
    n = model.n
    K = t0.shape[0]
    M = np.zeros((K, n, n), dtype=complex)
    for a, b in model.coupled_pairs():
        alpha = 0.5 * (model.slopes[a] - model.slopes[b])
        beta = model.offsets[a] - model.offsets[b]
        integral = model.couplings[a, b] * _chirp_integral(alpha, beta, t0, t1)
        M[:, a, b] = integral
        M[:, b, a] = np.conj(integral)
    return M


def _expm_stack(M: np.ndarray) -> np.ndarray:
    """exp(-i M) for a stack of Hermitian matrices via scaled Taylor series."""
    A = -1j * M
    norm = float(np.max(np.sum(np.abs(A), axis=-1), initial=0.0))
    squarings = max(0, int(math.ceil(math.log2(norm / 0.25))) if norm > 0.25 else 0)
    A = A / (2.0**squarings)
    n = M.shape[-1]
    U = np.broadcast_to(np.eye(n, dtype=complex), M.shape).copy()
    term = U.copy()
    for k in range(1, 24):
        term = term @ A / k
        U += term
        if float(np.max(np.abs(term))) < 1e-18:
            break
    for _ in range(squarings):
        U = U @ U
    return U


def _ordered_product(U: np.ndarray) -> np.ndarray:
    """Chronological product U[-1] @ ... @ U[0] by pairwise tree reduction."""
    while U.shape[0] > 1:
        k = U.shape[0]
        half = (k // 2) * 2
        paired = U[1:half:2] @ U[0:half:2]
        U = np.concatenate([paired, U[half:]], axis=0) if k % 2 else paired
    return U[0]


def _stepped_propagator(
    model: MLZModel, t0: float, t1: float, dt: float, order: int
) -> np.ndarray:
    """Rotating-frame propagator over [t0, t1] by exponential-average steps."""
    k = int(math.ceil((t1 - t0) / dt - 1e-12))
    edges = t0 + dt * np.arange(k + 1)
    edges[-1] = t1
    starts, ends = edges[:-1], edges[1:]
    stages = _STAGES[order]
    if len(stages) == 1:
        M = _frame_averages(model, starts, ends)
    else:
        # split every step into composition legs; legs stay chronological
        dts = ends - starts
        offs = np.concatenate(([0.0], np.cumsum(stages)))
        leg_start = starts[:, None] + offs[None, :-1] * dts[:, None]
        leg_end = starts[:, None] + offs[None, 1:] * dts[:, None]
        M = _frame_averages(model, leg_start.ravel(), leg_end.ravel())
    return _ordered_product(_expm_stack(M))


def _transfer_pairs(model: MLZModel) -> list[tuple[int, int]]:
    """Pairs linked directly or through one intermediate level."""
    direct = set(model.coupled_pairs())
    pairs = set(direct)
    for a in range(model.n):
        for b in range(a + 1, model.n):
            if any(
                model.couplings[a, c] != 0.0 and model.couplings[c, b] != 0.0
                for c in range(model.n)
            ):
                pairs.add((a, b))
    return sorted(pairs)


def _tails_applicable(model: MLZModel) -> bool:
    """Boundary maps need every transfer-connected pair to separate linearly;
    equal-slope pairs with a shared coupled neighbour mix secularly forever,
    so such models fall back to plain stepping."""
    return all(
        model.slopes[a] != model.slopes[b] for a, b in _transfer_pairs(model)
    )


def _active_band(model: MLZModel) -> tuple[float, float]:
    """Time band outside which every transfer pair beats faster than OMEGA_MIN."""
    lo, hi = np.inf, -np.inf
    for a, b in _transfer_pairs(model):
        dbeta = model.slopes[a] - model.slopes[b]
        de = model.offsets[a] - model.offsets[b]
        center = -de / dbeta
        radius = OMEGA_MIN / abs(dbeta)
        lo = min(lo, center - radius)
        hi = max(hi, center + radius)
    if not math.isfinite(lo):  # no couplings at all
        return 0.0, 0.0
    return lo, hi


def _oscillation_primitive(model: MLZModel, t: float) -> np.ndarray:
    """Zero-average antiderivative of the rotating-frame Hamiltonian.

    Valid only where every coupled pair satisfies |d theta / dt| >= OMEGA_MIN:
    entry (a, b) is ``g_ab exp(i theta_ab) u(t)`` with ``u`` the three-term
    large-phase-rate series ``-i/w - 2 alpha / w^3 + 12 i alpha^2 / w^5`` in
    the rate ``w = theta'``.  Hermitian by construction.
    """
    n = model.n
    W = np.zeros((n, n), dtype=complex)
    for a, b in model.coupled_pairs():
        alpha = 0.5 * (model.slopes[a] - model.slopes[b])
        de = model.offsets[a] - model.offsets[b]
        w = 2.0 * alpha * t + de
        if abs(w) < 0.999 * OMEGA_MIN:
            raise AccuracyError(
                f"asymptotic map requested at t={t} where pair ({a},{b}) "
                f"still beats slowly (rate {abs(w):.1f})"
            )
        theta = alpha * t * t + de * t
        u = -1j / w - 2.0 * alpha / w**3 + 12j * alpha * alpha / w**5
        val = model.couplings[a, b] * np.exp(1j * theta) * u
        W[a, b] = val
        W[b, a] = np.conj(val)
    return W


def _secular_phases(model: MLZModel, t0: float, t1: float) -> np.ndarray:
    """Second-order level-shift phases integrated over a crossing-free span.

    phi_a = sum_c g_ac^2 / dbeta_ac * log(w_ac(t1) / w_ac(t0)), the integral
    of the weak-coupling energy shifts; both rates must have equal signs
    (no crossing inside [t0, t1])."""
    phi = np.zeros(model.n)
    for a, c in model.coupled_pairs():
        dbeta = model.slopes[a] - model.slopes[c]
        de = model.offsets[a] - model.offsets[c]
        w0 = dbeta * t0 + de
        w1 = dbeta * t1 + de
        ratio = w1 / w0
        if ratio <= 0.0:
            raise AccuracyError(
                f"pair ({a},{c}) crosses inside an asymptotic span [{t0}, {t1}]"
            )
        shift = math.log(ratio) / dbeta
        phi[a] += model.couplings[a, c] ** 2 * shift
        phi[c] -= model.couplings[a, c] ** 2 * shift
    return phi


def _transfer_boundary(model: MLZModel, t: float) -> np.ndarray:
    """Boundary value of the second-order transfer integral at time t.

    The dressed-frame generator retains off-diagonal terms built from
    two-step routes a -> c -> b; their oscillatory integral reduces, by parts,
    to boundary evaluations of

        B_ab = sum_c g_ac g_cb (u_ac - u_cb) exp(i theta_ab) / (2 i w_ab)

    with ``u`` the same series as the oscillation primitive.  The difference
    B(t1) - B(t0) is the leading net transfer across a crossing-free span and
    is anti-Hermitian by construction.
    """
    slopes = model.slopes
    offsets = model.offsets
    g = model.couplings
    dbeta = slopes[:, None] - slopes[None, :]
    de = offsets[:, None] - offsets[None, :]
    w = dbeta * t + de
    alpha = 0.5 * dbeta
    with np.errstate(divide="ignore", invalid="ignore"):
        u = -1j / w - 2.0 * alpha / w**3 + 12j * alpha * alpha / w**5
    u = np.where(g != 0.0, u, 0.0)
    gu = g * u
    F = gu @ g - g @ gu  # f_ab = sum_c g_ac g_cb (u_ac - u_cb)
    active = F != 0.0
    np.fill_diagonal(active, False)
    if np.any(active & (np.abs(w) < 0.999 * OMEGA_MIN)):
        raise AccuracyError(
            f"transfer boundary requested at t={t} where a linked pair "
            "still beats slowly"
        )
    theta = alpha * t * t + de * t
    with np.errstate(divide="ignore", invalid="ignore"):
        B = F * np.exp(1j * theta) / (2j * w)
    return np.where(active, B, 0.0)


def _tail_map(model: MLZModel, t0: float, t1: float) -> np.ndarray:
    """Closed-form rotating-frame propagator over a crossing-free tail span.

    Composes the boundary dressing by the oscillation primitive with the
    secular phase advance and the second-order transfer kick:

        U = exp(-i W(t1)) exp(Y/2) diag(exp(-i phi)) exp(Y/2) exp(+i W(t0))

    Every factor is unitary, and the whole map is independent of dt; its
    residual is O(g^2 / OMEGA_MIN^2) relative in amplitude.
    """
    left = _expm_stack(_oscillation_primitive(model, t1)[None])[0]
    right = _expm_stack(-_oscillation_primitive(model, t0)[None])[0]
    d = np.exp(-1j * _secular_phases(model, t0, t1))
    Y = _transfer_boundary(model, t1) - _transfer_boundary(model, t0)
    half = _expm_stack((0.5j * Y)[None])[0]  # expm(Y/2), unitary
    return left @ half @ (d[:, None] * half) @ right


def _interaction_propagator(model: MLZModel, config: PropagationConfig) -> np.ndarray:
    """Full rotating-frame propagator over the config window.

    The band where any coupled pair beats slower than OMEGA_MIN is stepped
    with the composition integrator; the remaining tails, where the frame
    Hamiltonian only dresses the levels without net transitions, use the
    closed-form boundary maps.  The step size therefore controls accuracy
    exactly where the dynamics happens.
    """
    if _tails_applicable(model):
        lo, hi = _active_band(model)
    else:  # degenerate slopes: step the whole window, no boundary maps
        lo, hi = -math.inf, math.inf
    a = max(config.t_start, min(lo, config.t_end))
    b = min(config.t_end, max(hi, config.t_start))
    if a >= b:  # window entirely on one asymptotic side
        return _tail_map(model, config.t_start, config.t_end)
    U = _stepped_propagator(model, a, b, config.dt, config.order)
    if a > config.t_start:
        U = U @ _tail_map(model, config.t_start, a)
    if b < config.t_end:
        U = _tail_map(model, b, config.t_end) @ U
    return U


def _frame_phases(model: MLZModel, t: float) -> np.ndarray:
    return model.slopes * (0.5 * t * t) + model.offsets * t


def _rk4_propagator(model: MLZModel, config: PropagationConfig) -> np.ndarray:
    """Fixed-frame propagator by classic Runge-Kutta on the full matrix."""
    edges = config.edges()
    n = model.n
    Y = np.eye(n, dtype=complex)
    H = np.array(model.couplings, dtype=complex)
    diag = np.diag_indices(n)

    def rhs(t, y):
        H[diag] = model.slopes * t + model.offsets
        return -1j * (H @ y)

    for t0, t1 in zip(edges[:-1], edges[1:]):
        h = t1 - t0
        k1 = rhs(t0, Y)
        k2 = rhs(t0 + 0.5 * h, Y + 0.5 * h * k1)
        k3 = rhs(t0 + 0.5 * h, Y + 0.5 * h * k2)
        k4 = rhs(t1, Y + h * k3)
        Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Y


def propagator_matrix(model: MLZModel, config: PropagationConfig) -> np.ndarray:
    """Propagator of H(t) over the window, in the fixed (diabatic) frame.

    Columns are the final states of the basis vectors.  Norm conservation is
    enforced to :data:`NORM_DRIFT_TOL` per column; the rotating-frame method
    is unitary by construction, so this mainly guards ``rk4`` misuse.
    """
    if config.method == "interaction":
        U = _interaction_propagator(model, config)
        U = np.exp(-1j * _frame_phases(model, config.t_end))[:, None] * U
        U = U * np.exp(1j * _frame_phases(model, config.t_start))[None, :]
    else:
        U = _rk4_propagator(model, config)
    drift = float(np.max(np.abs(np.linalg.norm(U, axis=0) - 1.0)))
    if drift > NORM_DRIFT_TOL:
        raise AccuracyError(
            f"propagation lost unitarity: norm drift {drift:.2e} "
            f"(method={config.method}, dt={config.dt}); reduce dt"
        )
    return U


def propagate(model: MLZModel, config: PropagationConfig) -> np.ndarray:
    """Final state vector of the configured initial condition."""
    U = propagator_matrix(model, config)
    return U @ config.initial_vector(model.n)


def numeric_transition_matrix(
    model: MLZModel, config: PropagationConfig | None = None
) -> TransitionMatrix:
    """Transition probabilities from direct propagation over the window.

    ``values[a, b]`` is the occupation of level a at ``t_end`` for a start on
    level b at ``t_start``.  Double stochasticity holds to the propagation
    accuracy (1e-4 is asserted); convergence to the asymptotic matrix is the
    caller's concern via window and step size.
    """
    config = config or PropagationConfig()
    U = propagator_matrix(model, config)
    out = TransitionMatrix(np.abs(U) ** 2)
    out.validate(1e-4)
    return out


# ---------------------------------------------------------------------------
# Parameter sweeps


@dataclass(frozen=True)
class SweepRow:
    """One grid point: parameter values, its matrix, or the failure reason."""

    values: dict
    matrix: TransitionMatrix | None
    error: str | None = None


@dataclass(frozen=True)
class SweepResult:
    parameters: tuple[str, ...]
    rows: tuple[SweepRow, ...]

    def failed(self) -> list[SweepRow]:
        return [r for r in self.rows if r.error is not None]


def _sweep_apply(spec, name: str, value: float):
    """Return spec with one named parameter moved, preserving the family.

    Supported names: ``g_scale`` (scale all couplings), ``e`` (set the offset
    scale) and ``b<k>`` for k >= 3 (move one outer slope while holding
    ``g1^2/(b_k - b)`` fixed, which preserves the sum rule and the pair
    invariants exactly).
    """
    from .model_core import TwoBandSpec

    if not isinstance(spec, TwoBandSpec):
        raise ModelError("sweeps operate on two-band specs")
    if name == "g_scale":
        return replace(spec, g1_i=np.asarray(spec.g1_i) * float(value))
    if name == "e":
        return replace(spec, e=float(value))
    if name.startswith("b") and name[1:].isdigit():
        k = int(name[1:]) - 3  # user-facing levels are 1-based; outers start at 3
        if not 0 <= k < spec.n - 2:
            raise ModelError(f"no outer slope named {name}")
        b_i = np.array(spec.b_i, dtype=float)
        g1 = np.array(spec.g1_i, dtype=float)
        old = b_i[k]
        new = float(value)
        if abs(new) <= spec.b:
            raise ModelError(f"{name}={new} would not exceed the central slope")
        if np.sign(new) != np.sign(old):
            raise ModelError(f"{name} must stay on its slope side during a sweep")
        g1[k] = g1[k] * math.sqrt((new - spec.b) / (old - spec.b))
        b_i[k] = new
        return replace(spec, b_i=b_i, g1_i=g1)
    raise ModelError(f"unknown sweep parameter {name!r}")


def sweep(
    base,
    parameters: Sequence[tuple[str, Sequence[float]]],
    config: PropagationConfig | None = None,
    method: str = "numeric",
    threads: int = 1,
) -> SweepResult:
    """Evaluate transition matrices along a parameter path.

    ``parameters`` maps names to grids (a dict or a list of (name, grid)
    pairs); all grids must have equal length and are traversed in lockstep.
    Each grid point rebuilds the model from the modified spec — family
    constraints are re-enforced, so e.g. moving one slope retunes its
    coupling to keep the sum rule closed.  ``method`` is ``"numeric"``,
    ``"semiclassical"`` or ``"scattering"``.  Failures at single points are
    recorded per row, not raised.
    """
    from .model_core import build_two_band
    from .semiclassics import scattering_product, semiclassical_matrix

    if isinstance(parameters, Mapping):
        parameters = list(parameters.items())
    if not parameters:
        raise ModelError("need at least one (name, grid) pair")
    names = [nm for nm, _ in parameters]
    grids = [list(g) for _, g in parameters]
    if len({len(g) for g in grids}) != 1:
        raise ModelError("all parameter grids must have the same length")
    evaluators: dict[str, Callable] = {
        "numeric": lambda m: numeric_transition_matrix(m, config),
        "semiclassical": semiclassical_matrix,
        "scattering": scattering_product,
    }
    if method not in evaluators:
        raise ModelError(f"unknown sweep method {method!r}")
    points = list(zip(*grids))

    def run(point):
        values = dict(zip(names, (float(v) for v in point)))
        try:
            spec = base
            for nm, v in zip(names, point):
                spec = _sweep_apply(spec, nm, v)
            matrix = evaluators[method](build_two_band(spec))
            return SweepRow(values=values, matrix=matrix)
        except (ModelError, AccuracyError, ValueError) as exc:
            return SweepRow(values=values, matrix=None, error=str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, points))
    else:
        rows = [run(pt) for pt in points]
    return SweepResult(parameters=tuple(names), rows=tuple(rows))
