"""Charging-power bounds and their building blocks.

Three bounds are evaluated:

* isolated dynamics: ``|P| <= 2 sigma_F sigma_V``
* battery-local Lindblad dynamics:
  ``|P| <= 2 sigma_F sigma_Ht + sum_j gamma_j sqrt(<|[dF, L_j^dag]|^2>) ||L_j||``
* Hermitian jumps: ``|P| <= sigma_F (2 sigma_Ht + sum_j 2 gamma_j ||L_j||^2)``

``<|A|^2>`` means ``Tr(rho A A^dag)``.  With the dissipator written as
``L rho L^dag - {L^dag L, rho}/2`` the Cauchy-Schwarz step of the open bound
controls ``Tr(rho C^dag C)`` with ``C = [dF, L]``, which is the ``A A^dag``
moment of ``[dF, L^dag]``; the per-jump term therefore evaluates the moment
on ``L_j^dag``.  The two orderings coincide for Hermitian jumps.

The Hermitian-jump form is not implied by the open bound in general: an
``F`` eigenstate driven out of its eigenspace by a Hermitian jump has
``sigma_F = 0`` but non-zero power.  It is evaluated as written and the
trajectories report its slack separately.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .battery import FreeEnergyReport, charging_power_closed, charging_power_open
from .opcore import (
    HERMITIAN_TOL,
    LayoutError,
    Operator,
    OperatorLike,
    as_operator,
    embed,
    expectation,
    hermitian_eig,
    hermiticity_error,
    partial_trace,
    spectral_norm,
    variance,
)

# overall factor of the Hermitian-jump bound; the negative-control test patches it
HERMITIAN_PREFACTOR = 2.0

SLACK_TOL = -1e-9

FLike = Union[Operator, FreeEnergyReport, np.ndarray]


@dataclass
class BoundReport:
    power: float
    bound_value: float
    components: dict = field(default_factory=dict)
    clamped: bool = False

    @property
    def slack(self) -> float:
        return self.bound_value - abs(self.power)

    @property
    def holds(self) -> bool:
        return self.slack >= SLACK_TOL


def _unpack_F(F: FLike):
    if isinstance(F, FreeEnergyReport):
        return F.F, not F.full_rank
    return as_operator(F), False


def _std(rho: Operator, a: Operator) -> float:
    return math.sqrt(variance(rho, a))


def interaction_fluctuation(rho: OperatorLike, V: OperatorLike) -> float:
    """Standard deviation of ``V`` in the full state."""
    rho = as_operator(rho)
    V = as_operator(V, rho.layout)
    if V.dim != rho.dim:
        raise LayoutError("interaction and state dimensions differ")
    return _std(rho, V)


def bound_isolated(rho: OperatorLike, F: FLike, V: OperatorLike,
                   battery: int = -1) -> BoundReport:
    rho = as_operator(rho)
    F, clamped = _unpack_F(F)
    rho_W = partial_trace(rho, [battery % len(rho.layout)])
    sigma_F = _std(rho_W, F)
    sigma_V = interaction_fluctuation(rho, V)
    power = charging_power_closed(rho, F, V, battery=battery)
    return BoundReport(power=power, bound_value=2.0 * sigma_F * sigma_V,
                       components={"sigma_F": sigma_F, "sigma_V": sigma_V},
                       clamped=clamped)


def isolated_chain(rho: OperatorLike, F: OperatorLike, V: OperatorLike,
                   battery: int = -1) -> tuple[float, float, float]:
    """The three links ``|<[dF, dV]>|``, ``2|<dF dV>|`` and
    ``2 sqrt(<dF^2><dV^2>)`` of the isolated-bound derivation."""
    rho = as_operator(rho)
    F = as_operator(F)
    V = as_operator(V, rho.layout)
    n = rho.dim
    Fe = embed(F, rho.layout, battery % len(rho.layout)).data
    dF = Fe - expectation(rho, Fe).real * np.eye(n)
    dV = V.data - expectation(rho, V).real * np.eye(n)
    r = rho.data
    first = abs(np.trace(r @ (dF @ dV - dV @ dF)))
    second = 2 * abs(np.trace(r @ dF @ dV))
    third = 2 * math.sqrt(max(np.trace(r @ dF @ dF).real, 0.0)
                          * max(np.trace(r @ dV @ dV).real, 0.0))
    return float(first), float(second), float(third)


def _shifted(rho_W: Operator, F: Operator) -> np.ndarray:
    mean = expectation(rho_W, F).real
    return F.data - mean * np.eye(F.dim)


def commutator_second_moment(rho_W: OperatorLike, F: OperatorLike,
                             L: OperatorLike) -> float:
    """``Tr(rho_W C C^dag)`` with ``C = [dF, L]`` by direct multiplication."""
    rho_W, F, L = as_operator(rho_W), as_operator(F), as_operator(L)
    if not (rho_W.dim == F.dim == L.dim):
        raise LayoutError("battery operators have different dimensions")
    dF = _shifted(rho_W, F)
    C = dF @ L.data - L.data @ dF
    val = np.trace(rho_W.data @ C @ C.conj().T).real
    return max(float(val), 0.0)


def commutator_second_moment_eigen(rho_W: OperatorLike, F: OperatorLike,
                                   L: OperatorLike) -> float:
    """Same moment as :func:`commutator_second_moment`, expanded in the
    eigenbasis of ``dF``::

        sum_{jkl} rho_jk L_kl Ldag_lj (w_l^2 - w_l w_j - w_l w_k + w_j w_k)
    """
    rho_W, F, L = as_operator(rho_W), as_operator(F), as_operator(L)
    if not (rho_W.dim == F.dim == L.dim):
        raise LayoutError("battery operators have different dimensions")
    dF = Operator(F.layout, _shifted(rho_W, F))
    w, U = hermitian_eig(dF)
    r = U.conj().T @ rho_W.data @ U
    Lm = U.conj().T @ L.data @ U
    Ld = Lm.conj().T
    wj = w[:, None, None]
    wk = w[None, :, None]
    wl = w[None, None, :]
    weight = wl ** 2 - wl * wj - wl * wk + wj * wk
    terms = r[:, :, None] * Lm[None, :, :] * Ld.T[:, None, :] * weight
    return float(np.sum(terms).real)


def _check_model(model):
    for rate, _ in model.jumps:
        if rate < 0:
            raise ValueError(f"negative jump rate {rate}")


def _open_power(rho_W: Operator, F: Operator, model) -> float:
    from .dynamics import generator

    return charging_power_open(rho_W, F, generator(model, rho_W))


def bound_open(rho_W: OperatorLike, F: FLike, model) -> BoundReport:
    rho_W = as_operator(rho_W)
    F, clamped = _unpack_F(F)
    _check_model(model)
    sigma_F = _std(rho_W, F)
    sigma_Ht = _std(rho_W, model.H_tilde)
    jumps = []
    total = 2.0 * sigma_F * sigma_Ht
    for rate, L in model.jumps:
        moment = commutator_second_moment(rho_W, F, L.dag)
        norm = spectral_norm(L)
        term = rate * math.sqrt(moment) * norm
        jumps.append({"rate": rate, "moment": moment, "norm": norm, "term": term})
        total += term
    return BoundReport(power=_open_power(rho_W, F, model), bound_value=total,
                       components={"sigma_F": sigma_F, "sigma_Htilde": sigma_Ht,
                                   "jumps": jumps},
                       clamped=clamped)


def all_jumps_hermitian(model, tol: float = HERMITIAN_TOL) -> bool:
    return all(hermiticity_error(L.data) <= tol for _, L in model.jumps)


def bound_hermitian(rho_W: OperatorLike, F: FLike, model) -> BoundReport:
    rho_W = as_operator(rho_W)
    F, clamped = _unpack_F(F)
    _check_model(model)
    if not all_jumps_hermitian(model):
        raise ValueError("bound_hermitian needs Hermitian jump operators")
    sigma_F = _std(rho_W, F)
    sigma_Ht = _std(rho_W, model.H_tilde)
    jump_sum = sum(rate * spectral_norm(L) ** 2 for rate, L in model.jumps)
    value = sigma_F * (HERMITIAN_PREFACTOR * sigma_Ht + HERMITIAN_PREFACTOR * jump_sum)
    return BoundReport(power=_open_power(rho_W, F, model), bound_value=value,
                       components={"sigma_F": sigma_F, "sigma_Htilde": sigma_Ht,
                                   "jump_sum": jump_sum},
                       clamped=clamped)
