"""Free energy operator, extractable work and charging power of a battery.

The battery is always the *last* tensor factor of a composite layout, so a
full state on dims ``(d_S, d_B, d_A, d_W)`` has battery marginal
``partial_trace(rho, [3])``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import logsumexp

from .opcore import (
    DEFAULT_FLOOR,
    LayoutError,
    Operator,
    OperatorLike,
    as_operator,
    dot,
    expectation,
    hermitian_eig,
    hermiticity_error,
    log_psd,
    partial_trace,
    variance,
)


class Divergent(enum.Enum):
    REFERENCE_DIVERGENT = "reference-divergent"


REFERENCE_DIVERGENT = Divergent.REFERENCE_DIVERGENT


@dataclass(frozen=True)
class ReferenceBath:
    """Reference bath that defines extractable work.

    ``beta=math.inf`` is the zero-temperature reference, for which the free
    energy operator reduces to the battery Hamiltonian.
    """

    beta: float

    def __post_init__(self):
        if not (self.beta > 0):
            raise ValueError(f"inverse temperature must be positive, got {self.beta}")

    @property
    def infinite(self) -> bool:
        return math.isinf(self.beta)

    @property
    def temperature(self) -> float:
        return 0.0 if self.infinite else 1.0 / self.beta

    @classmethod
    def parse(cls, value) -> "ReferenceBath":
        if isinstance(value, str):
            if value.lower() in ("infinite", "inf", "zero-temperature"):
                return INFINITE
            raise ValueError(f"bath must be a positive number or 'infinite', got {value!r}")
        return cls(float(value))


INFINITE = ReferenceBath(math.inf)


@dataclass(frozen=True)
class FreeEnergyReport:
    F: Operator
    mean_F: float
    sigma_F: float
    W_max: Union[float, Divergent]
    full_rank: bool


def _check_state(rho: Operator, tol: float = 1e-9):
    if hermiticity_error(rho.data) > tol:
        raise ValueError("battery state is not Hermitian")
    tr = np.trace(rho.data)
    if abs(tr - 1) > tol:
        raise ValueError(f"battery state has trace {tr.real:.12g}, expected 1")


def free_energy_operator(rho_W: OperatorLike, H_W: OperatorLike,
                         bath: ReferenceBath = INFINITE,
                         floor: float = DEFAULT_FLOOR,
                         bounded_below: bool = True) -> FreeEnergyReport:
    """Build ``F = H_W + log(rho_W) / beta`` and its statistics in ``rho_W``."""
    rho_W = as_operator(rho_W)
    H_W = as_operator(H_W, rho_W.layout)
    if rho_W.dim != H_W.dim:
        raise LayoutError(f"state dim {rho_W.dim} != Hamiltonian dim {H_W.dim}")
    _check_state(rho_W)

    if bath.infinite:
        F = H_W
        w, _ = hermitian_eig(rho_W)
        full_rank = bool(w[-1] > floor)
    else:
        w, u = hermitian_eig(rho_W)
        if w[-1] < -1e-10:
            raise ValueError(f"battery state has negative eigenvalue {w[-1]:.3g}")
        full_rank = bool(w[-1] > floor)
        log_rho = (u * np.log(np.maximum(w, floor))) @ u.conj().T
        F = Operator(H_W.layout, H_W.data + log_rho / bath.beta)

    mean_F = expectation(rho_W, F).real
    sigma_F = math.sqrt(variance(rho_W, F))
    W = extractable_work(rho_W, H_W, bath, floor=floor, bounded_below=bounded_below)
    return FreeEnergyReport(F=F, mean_F=mean_F, sigma_F=sigma_F, W_max=W,
                            full_rank=full_rank)


def entropy(rho: OperatorLike, floor: float = DEFAULT_FLOOR) -> float:
    """Von Neumann entropy in nats, with 0 log 0 = 0."""
    rho = as_operator(rho)
    w, _ = hermitian_eig(rho)
    w = np.clip(w, 0.0, None)
    return float(-np.sum(w * np.log(np.maximum(w, floor))))


def thermal_free_energy(H_W: OperatorLike, bath: ReferenceBath) -> float:
    """Free energy ``-log(Z)/beta`` of the Gibbs state; ground energy at zero T."""
    E, _ = hermitian_eig(H_W)
    if bath.infinite:
        return float(E[-1])
    return float(-logsumexp(-bath.beta * E) / bath.beta)


def thermal_state(H_W: OperatorLike, bath: ReferenceBath) -> Operator:
    H_W = as_operator(H_W)
    if bath.infinite:
        raise ValueError("the zero-temperature Gibbs state is not unique in general")
    E, u = hermitian_eig(H_W)
    logp = -bath.beta * E
    p = np.exp(logp - logsumexp(logp))
    return Operator(H_W.layout, (u * p) @ u.conj().T)


def extractable_work(rho_W: OperatorLike, H_W: OperatorLike,
                     bath: ReferenceBath = INFINITE,
                     floor: float = DEFAULT_FLOOR,
                     bounded_below: bool = True):
    """``F(rho) - F(tau_beta)`` with ``F(rho) = U - S / beta``.

    At zero temperature the reference is the ground energy; pass
    ``bounded_below=False`` for a Hamiltonian that stands in for a spectrum
    without a ground state, in which case the reference diverges and
    :data:`REFERENCE_DIVERGENT` is returned.
    """
    rho_W = as_operator(rho_W)
    H_W = as_operator(H_W, rho_W.layout)
    if rho_W.dim != H_W.dim:
        raise LayoutError(f"state dim {rho_W.dim} != Hamiltonian dim {H_W.dim}")
    U = expectation(rho_W, H_W).real
    if bath.infinite:
        if not bounded_below:
            return REFERENCE_DIVERGENT
        return U - thermal_free_energy(H_W, bath)
    S = entropy(rho_W, floor)
    return (U - S / bath.beta) - thermal_free_energy(H_W, bath)


def _battery_marginal(rho: Operator, battery: int) -> Operator:
    n = len(rho.layout)
    return partial_trace(rho, [battery % n])


def _lift_battery_trace(rho: Operator, X: np.ndarray, battery: int) -> np.ndarray:
    """``Tr_rest(X)`` for a full-space matrix ``X`` sharing ``rho``'s layout."""
    return partial_trace(Operator(rho.layout, X), [battery % len(rho.layout)]).data


def entropy_rate_closed(rho: OperatorLike, rho_W: OperatorLike, V: OperatorLike,
                        floor: float = DEFAULT_FLOOR, battery: int = -1) -> float:
    """``dS(rho_W)/dt = -i Tr(V [log rho_W (x) 1, rho])`` under unitary evolution."""
    rho = as_operator(rho)
    V = as_operator(V, rho.layout)
    rho_W = as_operator(rho_W)
    marginal = _battery_marginal(rho, battery)
    if marginal.dim != rho_W.dim or np.max(np.abs(marginal.data - rho_W.data)) > 1e-9:
        raise ValueError("rho_W is not the battery marginal of rho")
    if V.dim != rho.dim:
        raise LayoutError("interaction and state dimensions differ")
    log_rho = log_psd(rho_W, floor)
    # Tr(V [L (x) 1, rho]) = Tr_W(L Tr_rest([rho, V]))
    if V.is_hermitian(1e-12):
        c = dot(V, rho.data).conj().T  # rho V
        comm = c - c.conj().T
    else:
        comm = rho.data @ V.data - V.data @ rho.data
    reduced = _lift_battery_trace(rho, comm, battery)
    val = -1j * np.sum(log_rho.data.T * reduced)
    return _real(val, "entropy rate")


def charging_power_closed(rho: OperatorLike, F: OperatorLike, V: OperatorLike,
                          battery: int = -1) -> float:
    """``P = -i Tr([rho, F (x) 1] V)`` for a battery-local ``F``."""
    rho = as_operator(rho)
    V = as_operator(V, rho.layout)
    F = as_operator(F)
    if V.dim != rho.dim:
        raise LayoutError("interaction and state dimensions differ")
    if F.dim != rho.layout.dims[battery]:
        raise LayoutError(
            f"F has dim {F.dim}, battery factor has dim {rho.layout.dims[battery]}")
    # Tr([rho, F]V) = Tr(F [V, rho]) = Tr_W(F Tr_rest([V, rho]))
    c = dot(V, rho.data)
    comm = c - c.conj().T if V.is_hermitian(1e-12) else c - rho.data @ V.data
    reduced = _lift_battery_trace(rho, comm, battery)
    return _real(-1j * np.sum(F.data.T * reduced), "charging power")


def charging_power_open(rho_W: OperatorLike, F: OperatorLike,
                        generator_output: OperatorLike, tol: float = 1e-9) -> float:
    """Rate of change of ``<F>`` given ``d rho_W / dt``.

    ``F`` is held fixed: ``Tr(rho_W dF/dt) = Tr(d rho_W/dt) / beta`` vanishes,
    so the rate is ``Tr(d rho_W/dt F)``.
    """
    rho_W = as_operator(rho_W)
    F = as_operator(F)
    drho = as_operator(generator_output)
    if not (rho_W.dim == F.dim == drho.dim):
        raise LayoutError("battery operators have different dimensions")
    tr = np.trace(drho.data)
    if abs(tr) > tol:
        raise ValueError(f"generator output is not traceless (trace {tr:.3g})")
    if hermiticity_error(drho.data) > tol:
        raise ValueError("generator output is not Hermitian")
    return float(np.sum(drho.data.T * F.data).real)


def _real(val: complex, what: str, tol: float = 1e-9) -> float:
    if abs(val.imag) > tol * max(1.0, abs(val.real)):
        raise ArithmeticError(f"{what} has imaginary part {val.imag:.3g}")
    return float(val.real)
