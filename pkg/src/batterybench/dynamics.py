"""Time evolution of composite (closed or reset) and battery-local Lindblad models.

Integration is classical fixed-step fourth-order Runge-Kutta.  States are
symmetrized after every step but never renormalized; trace drift,
negativity and truncation leakage are checked by guards that abort the
run instead.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import battery as bt
from . import bounds as bd
from .opcore import (
    HilbertLayout,
    LayoutError,
    Operator,
    OperatorLike,
    as_operator,
    expectation,
    partial_trace,
    symmetrize,
)

log = logging.getLogger(__name__)


class ResetChannel(NamedTuple):
    """Replace factor ``index`` by ``target`` at rate ``rate``."""

    index: int
    rate: float
    target: Operator


class Jump(NamedTuple):
    rate: float
    op: Operator


@dataclass(frozen=True, eq=False)
class CompositeModel:
    """System-bath-ancilla plus battery, battery as the last factor.

    ``H = H_SBA (x) 1 + 1 (x) H_W + V`` drives ``d rho/dt = -i[H, rho]``,
    plus ``p_i (tau_i (x) Tr_i rho - rho)`` for each reset channel.

    With ``include_free=False`` the local part ``H_SBA (x) 1 + 1 (x) H_W`` is
    left out of the generator, i.e. the state is propagated in the frame
    rotating with it.  That is exact for every recorded observable when ``V``
    and the reset targets commute with the local part, as in the engine.
    """

    layout: HilbertLayout
    H_SBA: Operator
    H_W: Operator
    V: Operator
    resets: tuple = ()
    include_free: bool = True
    bounded_below: bool = True

    def __post_init__(self):
        layout = self.layout
        if not isinstance(layout, HilbertLayout):
            layout = HilbertLayout(tuple(layout))
            object.__setattr__(self, "layout", layout)
        if len(layout) < 2:
            raise LayoutError("a composite model needs at least one factor besides the battery")
        rest = HilbertLayout(layout.dims[:-1])
        H_SBA = as_operator(self.H_SBA, rest)
        H_W = as_operator(self.H_W)
        V = as_operator(self.V, layout)
        if H_SBA.dim != rest.total:
            raise LayoutError(f"H_SBA has dim {H_SBA.dim}, expected {rest.total}")
        if H_W.dim != layout.dims[-1]:
            raise LayoutError(f"H_W has dim {H_W.dim}, expected {layout.dims[-1]}")
        if V.dim != layout.total:
            raise LayoutError(f"V has dim {V.dim}, expected {layout.total}")
        for name, op in (("H_SBA", H_SBA), ("H_W", H_W), ("V", V)):
            if not op.is_hermitian():
                raise ValueError(f"{name} is not Hermitian")
        resets = []
        for ch in self.resets:
            ch = ResetChannel(*ch)
            idx = ch.index % len(layout)
            if idx == len(layout) - 1:
                raise ValueError("reset channels may not act on the battery factor")
            if ch.rate < 0:
                raise ValueError(f"negative reset rate {ch.rate}")
            tgt = as_operator(ch.target)
            if tgt.dim != layout.dims[idx] or not tgt.is_density():
                raise ValueError(f"reset target for factor {idx} is not a valid state")
            resets.append(ResetChannel(idx, float(ch.rate), tgt))
        object.__setattr__(self, "H_SBA", H_SBA)
        object.__setattr__(self, "H_W", H_W)
        object.__setattr__(self, "V", Operator(layout, V.data))
        object.__setattr__(self, "resets", tuple(resets))

    @property
    def battery_dim(self) -> int:
        return self.layout.dims[-1]

    def hamiltonian(self) -> Operator:
        nb = self.battery_dim
        rest = self.H_SBA.dim
        H = self.V.data.copy()
        if self.include_free:
            H = H + np.kron(self.H_SBA.data, np.eye(nb)) + np.kron(np.eye(rest), self.H_W.data)
        return Operator(self.layout, H)


@dataclass(frozen=True, eq=False)
class LindbladModel:
    """Battery-local Markovian generator
    ``-i[H_W + H_tilde, rho] + sum_j gamma_j (L_j rho L_j^dag - {L_j^dag L_j, rho}/2)``."""

    H_W: Operator
    H_tilde: Operator
    jumps: tuple = ()
    bounded_below: bool = True

    def __post_init__(self):
        H_W = as_operator(self.H_W)
        H_t = as_operator(self.H_tilde, H_W.layout)
        if H_t.dim != H_W.dim:
            raise LayoutError("H_tilde and H_W have different dimensions")
        if not (H_W.is_hermitian() and H_t.is_hermitian()):
            raise ValueError("H_W and H_tilde must be Hermitian")
        jumps = []
        for rate, L in self.jumps:
            L = as_operator(L, H_W.layout)
            if L.dim != H_W.dim:
                raise LayoutError("jump operator has the wrong dimension")
            if rate < 0:
                raise ValueError(f"negative jump rate {rate}")
            jumps.append(Jump(float(rate), L))
        object.__setattr__(self, "H_W", H_W)
        object.__setattr__(self, "H_tilde", H_t)
        object.__setattr__(self, "jumps", tuple(jumps))


Model = Union[CompositeModel, LindbladModel]


# -- generators ---------------------------------------------------------------

def _reset_einsum(dims: Sequence[int], index: int) -> str:
    n = len(dims)
    letters = "abcdefghijklmnopqrstuvwx"
    rows = list(letters[:n])
    cols = list(letters[n:2 * n])
    full = "".join(rows) + "".join(cols)
    traced_rows = rows.copy()
    traced_cols = cols.copy()
    traced_rows[index] = "z"
    traced_cols[index] = "z"
    return f"{rows[index]}{cols[index]},{''.join(traced_rows)}{''.join(traced_cols)}->{full}"


@functools.lru_cache(maxsize=64)
def _compiled(model: Model) -> Callable[[np.ndarray], np.ndarray]:
    """Array-level right-hand side ``rho -> d rho/dt`` for ``model``."""
    if isinstance(model, LindbladModel):
        H = model.H_W.data + model.H_tilde.data
        ops = [(rate, L.data, L.data.conj().T, L.data.conj().T @ L.data)
               for rate, L in model.jumps if rate > 0]

        def rhs(rho):
            hr = H @ rho
            out = -1j * (hr - hr.conj().T)
            for rate, L, Ld, LdL in ops:
                a = LdL @ rho
                out += rate * (L @ rho @ Ld - 0.5 * (a + a.conj().T))
            return out

        return rhs

    Hop = model.hamiltonian()
    H = Hop.sparse if Hop.sparse is not None else Hop.data
    dims = model.layout.dims
    n = model.layout.total
    shape = tuple(dims) * 2
    resets = [(ch.rate, ch.target.data, _reset_einsum(dims, ch.index))
              for ch in model.resets if ch.rate > 0]
    total_rate = sum(r for r, _, _ in resets)

    def rhs(rho):
        hr = H @ rho
        out = -1j * (hr - hr.conj().T)
        if resets:
            t = rho.reshape(shape)
            for rate, tau, spec in resets:
                out += rate * np.einsum(spec, tau, t).reshape(n, n)
            out -= total_rate * rho
        return out

    return rhs


def generator(model: Model, rho: OperatorLike) -> Operator:
    """``d rho / dt`` for the model at state ``rho``."""
    rho = as_operator(rho)
    if isinstance(model, LindbladModel):
        if rho.dim != model.H_W.dim:
            raise LayoutError("state does not live on the battery")
        layout = model.H_W.layout
    else:
        if rho.dim != model.layout.total:
            raise LayoutError("state does not match the model layout")
        layout = model.layout
    out = _compiled(model)(np.asarray(rho.data))
    return Operator(layout, out)


def _rk4(rhs, rho: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(rho)
    k2 = rhs(rho + 0.5 * h * k1)
    k3 = rhs(rho + 0.5 * h * k2)
    k4 = rhs(rho + h * k3)
    out = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return symmetrize(out)


def _reset_superop(n: int, dims: Sequence[int], ch: ResetChannel) -> sp.csr_matrix:
    """Row-major vectorization of ``rho -> tau (x)_i Tr_i rho``."""
    i = ch.index
    A = int(np.prod(dims[:i]))
    d = dims[i]
    B = int(np.prod(dims[i + 1:]))
    tau = ch.target.data
    s, s2 = np.nonzero(tau)
    a, b, a2, b2, t = np.meshgrid(np.arange(A), np.arange(B), np.arange(A),
                                  np.arange(B), np.arange(d), indexing="ij")
    a, b, a2, b2, t = (x.ravel()[:, None] for x in (a, b, a2, b2, t))
    rows = ((a * d + s) * B + b) * n + (a2 * d + s2) * B + b2
    cols = ((a * d + t) * B + b) * n + (a2 * d + t) * B + b2
    cols = np.broadcast_to(cols, rows.shape)
    vals = np.broadcast_to(tau[s, s2], rows.shape)
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n * n, n * n))


@functools.lru_cache(maxsize=16)
def _liouvillian(model: CompositeModel) -> sp.csr_matrix:
    """Sparse generator acting on the row-major vectorized state."""
    n = model.layout.total
    H = model.hamiltonian().sparse
    eye = sp.identity(n, format="csr")
    M = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    for ch in model.resets:
        if ch.rate > 0:
            M = M + ch.rate * (_reset_superop(n, model.layout.dims, ch) - sp.identity(n * n))
    M = sp.csr_matrix(M)
    M.eliminate_zeros()
    return M


def _closed_support(M: sp.csr_matrix, seed: np.ndarray) -> np.ndarray:
    """Indices reachable from ``seed`` under repeated application of ``M``."""
    pattern = sp.csr_matrix((np.ones(M.nnz), M.indices, M.indptr), shape=M.shape)
    mask = seed.copy()
    while True:
        grown = mask | (pattern @ mask.astype(float) > 0)
        if np.array_equal(grown, mask):
            return np.flatnonzero(mask)
        mask = grown


def _stepper(model: Model, h: float, rho0: np.ndarray) -> Callable[[np.ndarray, int], np.ndarray]:
    """``(rho, k) -> rho`` after ``k`` RK4 steps of size ``h``, for states
    evolving from ``rho0``.

    A composite model with a sparse Hamiltonian is integrated through its
    sparse generator, restricted to the entries reachable from the support
    of ``rho0``; every other entry is identically zero along the trajectory.
    """
    if isinstance(model, CompositeModel) and model.hamiltonian().sparse is not None:
        n = model.layout.total
        M = _liouvillian(model)
        seed = (np.asarray(rho0) != 0).ravel()
        idx = _closed_support(M, seed)
        Msub = sp.csr_matrix(M[idx][:, idx])
        i, j = np.divmod(idx, n)
        pos = np.full(n * n, -1)
        pos[idx] = np.arange(len(idx))
        mirror = pos[j * n + i]
        if np.any(mirror < 0):
            raise RuntimeError("reachable support is not closed under transposition")

        def advance(rho, k):
            v = np.asarray(rho).ravel()[idx]
            for _ in range(k):
                k1 = Msub @ v
                k2 = Msub @ (v + 0.5 * h * k1)
                k3 = Msub @ (v + 0.5 * h * k2)
                k4 = Msub @ (v + h * k3)
                v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                v = 0.5 * (v + v[mirror].conj())
            out = np.zeros(n * n, dtype=complex)
            out[idx] = v
            return out.reshape(n, n)

        return advance

    rhs = _compiled(model)

    def advance(rho, k):
        for _ in range(k):
            rho = _rk4(rhs, rho, h)
        return rho

    return advance


def rk4_step(model: Model, rho: OperatorLike, h: float) -> Operator:
    if not h > 0:
        raise ValueError("step size must be positive")
    rho = as_operator(rho)
    return Operator(rho.layout, _stepper(model, float(h), rho.data)(rho.data, 1))


# -- trajectories -------------------------------------------------------------

class GuardViolation(RuntimeError):
    def __init__(self, kind: str, time: float, value: float, trajectory: "Trajectory"):
        super().__init__(f"{kind} guard tripped at t={time:.6g} (value {value:.3g})")
        self.kind = kind
        self.time = time
        self.value = value
        self.trajectory = trajectory


@dataclass
class Guards:
    trace_tol: float = 1e-8
    negativity_tol: float = 1e-8
    edge_threshold: Optional[float] = None
    edge_levels: int = 2
    # check positivity on every n-th sample (full eigendecomposition)
    positivity_stride: int = 1


@dataclass
class Trajectory:
    times: np.ndarray
    records: dict
    snapshots: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.records[name]

    def __len__(self):
        return len(self.times)

    @property
    def columns(self) -> list:
        return list(self.records)

    def index_at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def value_at(self, name: str, t: float) -> float:
        return float(self.records[name][self.index_at(t)])


class _Recorder:
    def __init__(self):
        self.times = []
        self.rows = []

    def add(self, t, row):
        self.times.append(t)
        self.rows.append(row)

    def trajectory(self, snapshots, meta) -> Trajectory:
        names = list(self.rows[0]) if self.rows else []
        recs = {k: np.array([r.get(k, np.nan) for r in self.rows], dtype=float) for k in names}
        return Trajectory(np.array(self.times, dtype=float), recs, snapshots, meta)


def edge_population(rho_W: np.ndarray, levels: int) -> float:
    p = np.real(np.diag(rho_W))
    k = min(levels, len(p))
    return float(np.sum(p[:k]) + np.sum(p[-k:]))


def observe(model: Model, rho: Operator, bath: bt.ReferenceBath,
            floor: float = 1e-12, edge_levels: int = 2,
            reference: Optional[dict] = None) -> dict:
    """Observable record for one sample of a trajectory."""
    data = rho.data
    row = {}
    if isinstance(model, LindbladModel):
        rho_W = rho
        row["trace_drift"] = abs(np.trace(data) - 1)
    else:
        rho_W = partial_trace(rho, [len(model.layout) - 1])
        row["trace_drift"] = abs(np.trace(data) - 1)
    rep = bt.free_energy_operator(rho_W, model.H_W, bath, floor,
                                  bounded_below=model.bounded_below)
    e_W = expectation(rho_W, model.H_W).real
    row["e_W"] = e_W
    if bath.infinite:
        row["dW"] = e_W - reference["e_W"] if reference else 0.0
    else:
        row["dW"] = rep.W_max - reference["W_max"] if reference else 0.0
        row["W_max"] = rep.W_max
    if isinstance(model, LindbladModel):
        op = bd.bound_open(rho_W, rep, model)
        row["P"] = op.power
        row["sigma_F"] = rep.sigma_F
        row["sigma_Htilde"] = op.components["sigma_Htilde"]
        row["bound_open"] = op.bound_value
        row["slack"] = op.slack
        if bd.all_jumps_hermitian(model):
            hm = bd.bound_hermitian(rho_W, rep, model)
            row["bound_hermitian"] = hm.bound_value
            row["slack_hermitian"] = hm.slack
        row["edge_pop"] = math.nan
    else:
        iso = bd.bound_isolated(rho, rep, model.V)
        row["P"] = iso.power
        row["sigma_F"] = rep.sigma_F
        row["sigma_V"] = iso.components["sigma_V"]
        row["bound_iso"] = iso.bound_value
        row["slack"] = iso.slack
        row["edge_pop"] = edge_population(rho_W.data, edge_levels)
    row["clamped"] = float(not rep.full_rank and not bath.infinite)
    return row


def evolve(model: Model, rho0: OperatorLike, t_final: float, h: float = 0.01,
           sample_stride: int = 1, guards: Optional[Guards] = None,
           bath: bt.ReferenceBath = bt.INFINITE,
           extra: Optional[Callable[[Operator], dict]] = None,
           snapshot_stride: Optional[int] = None,
           floor: float = 1e-12) -> Trajectory:
    """Integrate ``model`` from ``rho0`` to ``t_final`` with fixed step ``h``.

    Observables are recorded every ``sample_stride`` steps (and at both
    ends); ``extra`` may add model-specific columns.  Raises
    :class:`GuardViolation`, carrying the trajectory recorded so far, when a
    guard trips.
    """
    guards = guards or Guards()
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    if not h > 0:
        raise ValueError("step size must be positive")
    n_steps = int(round(t_final / h))
    if abs(n_steps * h - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} is not a multiple of h={h}")
    rho0 = as_operator(rho0)
    layout = model.H_W.layout if isinstance(model, LindbladModel) else model.layout
    if rho0.dim != layout.total:
        raise LayoutError("initial state does not match the model layout")
    if not rho0.is_density():
        raise ValueError("initial state is not a density matrix")
    rho0 = Operator(layout, rho0.data)

    rec = _Recorder()
    snapshots = []
    meta = {"h": h, "t_final": t_final, "sample_stride": sample_stride,
            "bath": "infinite" if bath.infinite else bath.beta}
    reference = None
    n_samples = 0

    def sample(step, rho_arr):
        nonlocal reference, n_samples
        t = step * h
        rho = Operator(layout, rho_arr)
        row = observe(model, rho, bath, floor, guards.edge_levels, reference)
        if reference is None:
            reference = {"e_W": row["e_W"], "W_max": row.get("W_max")}
            row["dW"] = 0.0
        if extra is not None:
            row.update(extra(rho))
        if n_samples % guards.positivity_stride == 0 or step == n_steps:
            row["min_eig"] = float(np.linalg.eigvalsh(rho_arr)[0])
        else:
            row["min_eig"] = math.nan
        rec.add(t, row)
        n_samples += 1
        if snapshot_stride and (n_samples - 1) % snapshot_stride == 0:
            snapshots.append((t, rho))
        for kind, value, bad in (
                ("trace", row["trace_drift"], row["trace_drift"] > guards.trace_tol),
                ("positivity", row["min_eig"], row["min_eig"] < -guards.negativity_tol),
                ("edge", row["edge_pop"], guards.edge_threshold is not None
                 and row["edge_pop"] > guards.edge_threshold)):
            if bad:
                raise GuardViolation(kind, t, value, rec.trajectory(snapshots, meta))

    advance = _stepper(model, float(h), rho0.data)
    rho = np.array(rho0.data)
    sample(0, rho)
    step = 0
    while step < n_steps:
        n = min(sample_stride, n_steps - step)
        rho = advance(rho, n)
        step += n
        sample(step, rho)
    return rec.trajectory(snapshots, meta)
