"""Two-qubit heat engine charging a ladder battery.

Qubit 1 (gap E1) is reset towards a cold thermal state at rate p1, qubit 2
(gap E2 = E1 + eps) towards a hot one at rate p2.  The exchange
``|01, n> <-> |10, n+1>`` is resonant, so energy moves into the ladder
``H_W = sum_n n eps |n><n|`` one quantum at a time.

Besides the full density-matrix model this module carries a closed set of
nine moment equations (first and second moments of the ladder
population), used as an independent oracle for the full simulation.

Conventions
-----------
* Layout is ``(qubit 1, qubit 2, ladder)`` with ladder levels
  ``n_min..n_max``.  The ladder stands in for an oscillator unbounded from
  below, so extractable work is only reported as a difference ``dW``.
* The moment sums ``Delta`` and ``alpha`` are purely imaginary for any
  Hermitian state; they are stored as the real numbers ``i*Delta`` and
  ``i*alpha``.  The charging power is then ``P = -g eps (i*Delta)``.
* The coherent initial state puts the phase ``exp(-i theta)`` on the excited
  component of qubit 1, so that ``theta = pi/2`` gives positive initial
  power.
* Only ``E1/T_c``, ``E2/T_h`` and ``eps`` enter the dynamics.  The state is
  propagated in the frame rotating with the local Hamiltonians, which
  commute with both the exchange term and the resets.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import battery as bt
from .dynamics import CompositeModel, Guards, ResetChannel, Trajectory, evolve
from .opcore import HilbertLayout, Operator

log = logging.getLogger(__name__)

PHASE_CONVENTION = "qubit-1 excited amplitude carries exp(-i*theta); theta=pi/2 gives P(0) > 0"

DIAG = "diag"
PSI_N = "psi_N"
RANDOM_PRODUCT = "random_product"
INITIAL_KINDS = (DIAG, PSI_N, RANDOM_PRODUCT)


@dataclass(frozen=True)
class EngineParams:
    epsilon: float = 1.0
    g: float = 0.01
    p1: float = 0.01
    p2: float = 0.01
    x1: float = 0.51
    x2: float = 0.50
    theta: float = math.pi / 2
    N: int = 2
    ladder_range: tuple = (-20, 40)
    edge_threshold: float = 1e-8

    def __post_init__(self):
        lo, hi = (int(v) for v in self.ladder_range)
        object.__setattr__(self, "ladder_range", (lo, hi))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if min(self.g, self.p1, self.p2) < 0:
            raise ValueError("g, p1 and p2 must be non-negative")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not lo <= 0 <= self.N - 1 <= hi:
            raise ValueError(
                f"ladder range {self.ladder_range} must contain 0..{self.N - 1}")
        if -lo < 10 or hi - (self.N - 1) < 10:
            log.warning("initial ladder support is closer than 10 levels to a "
                        "truncation edge; watch the edge-population guard")

    @property
    def n_levels(self) -> int:
        lo, hi = self.ladder_range
        return hi - lo + 1

    @property
    def r1(self) -> float:
        return thermal_ground_population(self.x1)

    @property
    def r2(self) -> float:
        return thermal_ground_population(self.x2)

    def replace(self, **kw) -> "EngineParams":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return EngineParams(**d)


def thermal_ground_population(x: float) -> float:
    """Ground population of a qubit with gap/temperature ratio ``x``."""
    return 1.0 / (1.0 + math.exp(-x))


def qubit_thermal(r: float) -> Operator:
    return Operator.from_array(np.diag([r, 1.0 - r]))


def _index(params: EngineParams, a: int, b: int, n: int) -> int:
    lo, _ = params.ladder_range
    return (2 * a + b) * params.n_levels + (n - lo)


def build_engine(params: EngineParams) -> CompositeModel:
    lo, hi = params.ladder_range
    L = params.n_levels
    eps = params.epsilon
    layout = HilbertLayout((2, 2, L))
    H_W = np.diag(eps * np.arange(lo, hi + 1, dtype=float))
    # E1 is arbitrary; reference it to zero so that E2 = eps
    H_S = np.kron(np.eye(2), np.diag([0.0, eps]))
    V = np.zeros((4 * L, 4 * L))
    for n in range(lo, hi):
        i = _index(params, 0, 1, n)
        j = _index(params, 1, 0, n + 1)
        V[i, j] = V[j, i] = params.g
    resets = (ResetChannel(0, params.p1, qubit_thermal(params.r1)),
              ResetChannel(1, params.p2, qubit_thermal(params.r2)))
    return CompositeModel(layout, H_S, H_W, V, resets,
                          include_free=False, bounded_below=False)


def initial_diag(params: EngineParams) -> Operator:
    L = params.n_levels
    lo, _ = params.ladder_range
    bat = np.zeros(L)
    bat[-lo] = 1.0
    rho = np.kron(np.kron(np.diag([params.r1, 1 - params.r1]),
                          np.diag([params.r2, 1 - params.r2])), np.diag(bat))
    return Operator(HilbertLayout((2, 2, L)), rho)


def initial_psiN(params: EngineParams) -> Operator:
    lo, hi = params.ladder_range
    N = params.N
    if N - 1 > hi:
        raise ValueError(f"N={N} exceeds the ladder top n_max={hi}")
    r1, r2 = params.r1, params.r2
    q1 = np.array([math.sqrt(r1), np.exp(-1j * params.theta) * math.sqrt(1 - r1)])
    q2 = np.array([math.sqrt(r2), math.sqrt(1 - r2)])
    bat = np.zeros(params.n_levels, dtype=complex)
    bat[-lo:-lo + N] = 1 / math.sqrt(N)
    psi = np.kron(np.kron(q1, q2), bat)
    return Operator(HilbertLayout((2, 2, params.n_levels)), np.outer(psi, psi.conj()))


def _random_density(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    r = a @ a.conj().T
    return r / np.trace(r).real


def initial_random_product(params: EngineParams, seed: int, width: int = 4) -> Operator:
    """Product of two random qubit states and a random ladder state on levels
    ``0..width-1``, all full rank on their supports."""
    lo, hi = params.ladder_range
    if width - 1 > hi:
        raise ValueError(f"width={width} exceeds the ladder top n_max={hi}")
    rng = np.random.default_rng(seed)
    q1 = _random_density(2, rng)
    q2 = _random_density(2, rng)
    bat = np.zeros((params.n_levels, params.n_levels), dtype=complex)
    bat[-lo:-lo + width, -lo:-lo + width] = _random_density(width, rng)
    rho = np.kron(np.kron(q1, q2), bat)
    return Operator(HilbertLayout((2, 2, params.n_levels)), 0.5 * (rho + rho.conj().T))


def initial_state(params: EngineParams, kind: str, seed: Optional[int] = None) -> Operator:
    if kind == DIAG:
        return initial_diag(params)
    if kind == PSI_N:
        return initial_psiN(params)
    if kind == RANDOM_PRODUCT:
        if seed is None:
            raise ValueError("the random product state needs a seed")
        return initial_random_product(params, seed)
    raise ValueError(
        f"unknown initial state {kind!r} (expected 'diag', 'psi_N' or 'random_product')")


# -- reduced moment system -----------------------------------------------------

@dataclass
class ReducedEngineState:
    """Moments of the engine state.  ``Delta`` and ``alpha`` hold ``i*Delta``
    and ``i*alpha``; ``m_b, m_c, m_d`` are the sums weighted by ``n``,
    ``n - 1`` and ``1`` over the qubit sectors ``{00, 01}``, ``{00, 10}`` and
    ``{00}``."""

    Delta: float
    Gamma1: float
    Gamma2: float
    e_W: float
    A: float
    alpha: float
    m_b: float
    m_c: float
    m_d: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ReducedEngineState":
        return cls(*(float(v) for v in a))

    @property
    def sigma_F(self) -> float:
        return math.sqrt(max(self.A - self.e_W ** 2, 0.0))

    def power(self, params: EngineParams) -> float:
        return -params.g * params.epsilon * self.Delta


_NAMES = [f.name for f in fields(ReducedEngineState)]


def _rhs_array(y: np.ndarray, params: EngineParams) -> np.ndarray:
    d, G1, G2, e, A, a, mb, mc, md = y
    g, eps = params.g, params.epsilon
    p1, p2, r1, r2 = params.p1, params.p2, params.r1, params.r2
    ps = p1 + p2
    return np.array([
        -2 * g * (G1 - G2) - ps * d,
        g * d + p1 * (r1 - G1),
        -g * d + p2 * (r2 - G2),
        -g * eps * d,
        -g * eps ** 2 * (d + 2 * a),
        -2 * g * (mb - mc - md) - ps * a,
        g * a - p1 * mb + p1 * r1 * e / eps,
        -g * a - p2 * mc + p2 * r2 * e / eps - p2 * r2,
        p1 * r1 * G2 + p2 * r2 * G1 - ps * md,
    ])


def reduced_rhs(state: ReducedEngineState, params: EngineParams) -> ReducedEngineState:
    """Time derivative of the nine moments (in the ``i*Delta`` storage)."""
    return ReducedEngineState.from_array(_rhs_array(state.to_array(), params))


def reduced_from_density(rho: Operator, params: EngineParams) -> ReducedEngineState:
    """Evaluate the moment sums directly from the matrix elements of ``rho``."""
    lo, hi = params.ladder_range
    L = params.n_levels
    r = np.asarray(rho.data).reshape(4, L, 4, L)
    n = np.arange(lo, hi + 1, dtype=float)
    pop = np.real(np.einsum("anan->an", r))  # (qubit sector, level)
    P00, P01, P10 = pop[0], pop[1], pop[2]
    # <01,n|rho|10,n+1> for n = lo..hi-1
    coh = r[1, np.arange(L - 1), 2, np.arange(1, L)]
    Delta = np.sum(coh - coh.conj())
    alpha = np.sum(n[:-1] * (coh - coh.conj()))
    eps = params.epsilon
    battery_pop = pop.sum(axis=0)
    return ReducedEngineState(
        Delta=float((1j * Delta).real),
        Gamma1=float(np.sum(P00 + P01)),
        Gamma2=float(np.sum(P00 + P10)),
        e_W=float(eps * np.sum(n * battery_pop)),
        A=float(eps ** 2 * np.sum(n ** 2 * battery_pop)),
        alpha=float((1j * alpha).real),
        m_b=float(np.sum(n * (P00 + P01))),
        m_c=float(np.sum((n - 1) * (P00 + P10))),
        m_d=float(np.sum(P00)),
    )


def integrate_reduced(params: EngineParams, y0: ReducedEngineState, t_final: float,
                      h: float = 0.01, sample_stride: int = 1) -> Trajectory:
    n_steps = int(round(t_final / h))
    y = y0.to_array()
    times, rows = [], []

    def record(step, y):
        st = ReducedEngineState.from_array(y)
        row = dict(zip(_NAMES, y))
        row["sigma_F"] = st.sigma_F
        row["P"] = st.power(params)
        row["dW"] = st.e_W - y0.e_W
        times.append(step * h)
        rows.append(row)

    rhs = lambda v: _rhs_array(v, params)  # noqa: E731
    record(0, y)
    for step in range(1, n_steps + 1):
        y = _rk4_real(rhs, y, h)
        if step % sample_stride == 0 or step == n_steps:
            record(step, y)
    recs = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return Trajectory(np.array(times), recs, meta={"h": h, "t_final": t_final,
                                                   "kind": "reduced"})


def _rk4_real(rhs, y, h):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


ORACLE_OBSERVABLES = ("e_W", "Delta", "Gamma1", "Gamma2", "A", "sigma_F")


@dataclass
class EngineRun:
    params: EngineParams
    initial: str
    full: Trajectory
    reduced: Trajectory
    comparison: dict = field(default_factory=dict)

    @property
    def oracle_ok(self) -> bool:
        return all(c["ok"] for c in self.comparison.values())


def compare(full: Trajectory, reduced: Trajectory, rtol: float = 1e-5,
            atol: float = 1e-8, names=ORACLE_OBSERVABLES) -> dict:
    """Per-observable deviation of the full run from the reduced oracle."""
    if len(full) != len(reduced) or np.max(np.abs(full.times - reduced.times)) > 1e-9:
        raise ValueError("trajectories are not on the same grid")
    out = {}
    for name in names:
        a, b = full[name], reduced[name]
        diff = np.abs(a - b)
        rel = diff / np.maximum(np.abs(b), atol)
        out[name] = {
            "max_abs": float(diff.max()),
            "max_rel": float(rel.max()),
            "ok": bool(np.all((diff <= rtol * np.abs(b)) | (diff <= atol))),
        }
    return out


def run_engine(params: EngineParams, initial: str = DIAG, t_final: float = 200.0,
               h: float = 0.01, sample_stride: int = 10,
               guards: Optional[Guards] = None, rtol: float = 1e-5,
               atol: float = 1e-8, seed: Optional[int] = None) -> EngineRun:
    """Integrate the full model and the moment system on the same grid."""
    model = build_engine(params)
    rho0 = initial_state(params, initial, seed)
    if guards is None:
        guards = Guards(edge_threshold=params.edge_threshold, positivity_stride=10)

    def extra(rho):
        st = reduced_from_density(rho, params)
        return {k: getattr(st, k) for k in _NAMES if k not in ("e_W",)}

    full = evolve(model, rho0, t_final, h, sample_stride, guards, bt.INFINITE, extra=extra)
    full.meta.update({"initial": initial, "seed": seed, "phase_convention": PHASE_CONVENTION,
                      "params": _params_dict(params)})
    y0 = reduced_from_density(rho0, params)
    reduced = integrate_reduced(params, y0, t_final, h, sample_stride)
    return EngineRun(params, initial, full, reduced, compare(full, reduced, rtol, atol))


def _params_dict(params: EngineParams) -> dict:
    d = asdict(params)
    d["ladder_range"] = list(params.ladder_range)
    return d


def initial_power(params: EngineParams) -> float:
    """Closed-form ``P(0)`` for the coherent state: ``2 g eps sin(theta)
    sqrt(r1 (1-r1) r2 (1-r2)) (N-1)/N``."""
    r1, r2 = params.r1, params.r2
    N = params.N
    return (2 * params.g * params.epsilon * math.sin(params.theta)
            * math.sqrt(r1 * (1 - r1) * r2 * (1 - r2)) * (N - 1) / N)
