import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from batterybench import battery as bt
from batterybench.dynamics import LindbladModel, generator
from batterybench.opcore import HilbertLayout, Operator, ket_bra, sigma_z, tensor_product
from conftest import rand_density, rand_herm
from oracles import qubit_work_excited_beta1, unitary_evolve, vn_entropy

BETA1 = bt.ReferenceBath(1.0)
H_QUBIT = np.diag([0.0, 1.0])


def test_bath_parsing():
    assert bt.ReferenceBath.parse("infinite").infinite
    assert bt.ReferenceBath.parse(2).beta == 2.0
    assert bt.INFINITE.temperature == 0.0
    for bad in (0, -1.0, "hot"):
        with pytest.raises(ValueError):
            bt.ReferenceBath.parse(bad)


def test_infinite_bath_F_is_hamiltonian():
    rng = np.random.default_rng(0)
    H = rand_herm(rng, 3)
    rep = bt.free_energy_operator(rand_density(rng, 3), H, bt.INFINITE)
    np.testing.assert_array_equal(rep.F.data, H)


def test_thermal_state_has_flat_F():
    rng = np.random.default_rng(1)
    H = rand_herm(rng, 4)
    tau = bt.thermal_state(H, BETA1)
    rep = bt.free_energy_operator(tau, H, BETA1)
    lnZ = logsumexp(-np.linalg.eigvalsh(H))
    np.testing.assert_allclose(rep.F.data, -lnZ * np.eye(4), atol=1e-12)
    assert rep.sigma_F < 1e-6
    assert abs(rep.W_max) < 1e-12


def test_qubit_free_energy_operator_by_hand():
    rho = np.diag([0.3, 0.7])
    rep = bt.free_energy_operator(rho, H_QUBIT, BETA1)
    f = np.array([math.log(0.3), 1 + math.log(0.7)])
    np.testing.assert_allclose(rep.F.data, np.diag(f), atol=1e-14)
    mean = 0.3 * f[0] + 0.7 * f[1]
    assert rep.mean_F == pytest.approx(mean, abs=1e-14)
    var = 0.3 * f[0] ** 2 + 0.7 * f[1] ** 2 - mean ** 2
    assert rep.sigma_F == pytest.approx(math.sqrt(var), abs=1e-14)
    assert rep.full_rank


def test_rank_deficient_is_flagged():
    rep = bt.free_energy_operator(np.diag([1.0, 0.0]), H_QUBIT, BETA1)
    assert not rep.full_rank
    assert rep.F.data[1, 1].real == pytest.approx(1 + math.log(1e-12))


def test_free_energy_rejects_bad_states():
    with pytest.raises(ValueError):
        bt.free_energy_operator(np.diag([0.5, 0.6]), H_QUBIT, BETA1)
    with pytest.raises(ValueError):
        bt.free_energy_operator(np.eye(3) / 3, H_QUBIT, BETA1)


def test_extractable_work_examples():
    rng = np.random.default_rng(2)
    H = rand_herm(rng, 3)
    assert abs(bt.extractable_work(bt.thermal_state(H, BETA1), H, BETA1)) < 1e-12
    W = bt.extractable_work(np.diag([0.0, 1.0]), H_QUBIT, BETA1)
    assert W == pytest.approx(qubit_work_excited_beta1(), abs=1e-12)
    assert W == pytest.approx(1.31326, abs=1e-5)


def test_zero_temperature_work():
    H = np.diag(np.arange(-3, 4, dtype=float))
    rho = rand_density(np.random.default_rng(3), 7)
    W = bt.extractable_work(rho, H, bt.INFINITE)
    assert W == pytest.approx(np.trace(rho @ H).real + 3, abs=1e-12)
    assert bt.extractable_work(rho, H, bt.INFINITE, bounded_below=False) is bt.REFERENCE_DIVERGENT


def test_work_equals_mean_F_difference():
    rng = np.random.default_rng(4)
    for beta in (0.3, 1.0, 4.0):
        bath = bt.ReferenceBath(beta)
        H = rand_herm(rng, 5)
        rho = rand_density(rng, 5)
        rep = bt.free_energy_operator(rho, H, bath)
        assert rep.W_max == pytest.approx(rep.mean_F - bt.thermal_free_energy(H, bath), abs=1e-9)


def test_thermal_mean_F_is_log_partition():
    rng = np.random.default_rng(5)
    for n in (2, 5, 9, 16):
        H = rand_herm(rng, n)
        beta = float(rng.uniform(0.2, 3))
        bath = bt.ReferenceBath(beta)
        rep = bt.free_energy_operator(bt.thermal_state(H, bath), H, bath)
        ref = -logsumexp(-beta * np.linalg.eigvalsh(H)) / beta
        assert rep.mean_F == pytest.approx(ref, abs=1e-10)


def test_entropy():
    assert bt.entropy(np.eye(4) / 4) == pytest.approx(math.log(4))
    assert bt.entropy(np.diag([1.0, 0.0])) == pytest.approx(0.0, abs=1e-15)
    rho = rand_density(np.random.default_rng(6), 5)
    assert bt.entropy(rho) == pytest.approx(vn_entropy(rho), abs=1e-12)


def _composite(rng, dims=(2, 2)):
    n = int(np.prod(dims))
    layout = HilbertLayout(dims)
    return Operator(layout, rand_density(rng, n)), rand_herm(rng, n)


def test_entropy_rate_trivial_cases():
    rng = np.random.default_rng(7)
    rho, V = _composite(rng)
    rho_W = bt._battery_marginal(rho, -1)
    assert bt.entropy_rate_closed(rho, rho_W, np.zeros((4, 4))) == 0.0
    prod = tensor_product(rand_density(rng, 2), np.eye(2) / 2)
    rate = bt.entropy_rate_closed(prod, np.eye(2) / 2, V)
    assert abs(rate) < 1e-12


def test_entropy_rate_marginal_check():
    rng = np.random.default_rng(8)
    rho, V = _composite(rng)
    with pytest.raises(ValueError):
        bt.entropy_rate_closed(rho, np.eye(2) / 2, V)


def test_entropy_rate_finite_difference():
    rng = np.random.default_rng(9)
    h = 1e-5
    for _ in range(5):
        rho, V = _composite(rng, (2, 3))
        # local terms do not move the battery entropy, only V does
        H = V + np.kron(rand_herm(rng, 2), np.eye(3)) + np.kron(np.eye(2), rand_herm(rng, 3))
        rho_W = bt._battery_marginal(rho, -1)

        def S(t):
            return vn_entropy(np.einsum("ajak->jk", unitary_evolve(H, rho.data, t).reshape(2, 3, 2, 3)))

        fd = (S(h) - S(-h)) / (2 * h)
        rate = bt.entropy_rate_closed(rho, rho_W, V)
        assert rate == pytest.approx(fd, rel=1e-4)


def test_power_closed_zero_cases():
    rng = np.random.default_rng(10)
    # battery state diagonal in the F eigenbasis and V diagonal in the product basis
    rho = tensor_product(np.diag([0.2, 0.8]), np.diag([0.6, 0.1, 0.3]))
    V = np.diag(rng.normal(size=6))
    assert bt.charging_power_closed(rho, np.diag([0.0, 1.0, 2.0]), V) == pytest.approx(0, abs=1e-15)
    # [F (x) 1, V] = 0
    F = np.diag([0.0, 1.0, 2.0])
    V = np.kron(rand_herm(rng, 2), np.diag([1.0, 2.0, 3.0]))
    rho, _ = _composite(rng, (2, 3))
    assert bt.charging_power_closed(rho, F, V) == pytest.approx(0, abs=1e-14)


@pytest.mark.parametrize("beta", [math.inf, 0.7, 2.0])
def test_power_closed_is_derivative_of_mean_F(beta):
    rng = np.random.default_rng(11)
    bath = bt.ReferenceBath(beta)
    h = 1e-5
    for _ in range(4):
        rho, V = _composite(rng, (2, 3))
        H_W = rand_herm(rng, 3)
        H = V + np.kron(rand_herm(rng, 2), np.eye(3)) + np.kron(np.eye(2), H_W)

        def free_energy(t):
            r = unitary_evolve(H, rho.data, t)
            r_W = np.einsum("ajak->jk", r.reshape(2, 3, 2, 3))
            U = np.trace(r_W @ H_W).real
            return U if bath.infinite else U - vn_entropy(r_W) / beta

        fd = (free_energy(h) - free_energy(-h)) / (2 * h)
        rep = bt.free_energy_operator(bt._battery_marginal(rho, -1), H_W, bath)
        P = bt.charging_power_closed(rho, rep.F, V)
        assert P == pytest.approx(fd, rel=1e-4)


def test_power_closed_splits_into_energy_and_entropy_rates():
    rng = np.random.default_rng(12)
    rho, V = _composite(rng, (3, 2))
    H_W = rand_herm(rng, 2)
    rho_W = bt._battery_marginal(rho, -1)
    beta = 1.7
    rep = bt.free_energy_operator(rho_W, H_W, bt.ReferenceBath(beta))
    dU = bt.charging_power_closed(rho, H_W, V)
    dS = bt.entropy_rate_closed(rho, rho_W, V)
    assert bt.charging_power_closed(rho, rep.F, V) == pytest.approx(dU - dS / beta, abs=1e-12)


def test_power_closed_layout_checks():
    rng = np.random.default_rng(13)
    rho, V = _composite(rng, (2, 3))
    with pytest.raises(ValueError):
        bt.charging_power_closed(rho, np.eye(2), V)


def test_power_open_examples():
    # amplitude damping from the maximally mixed state
    model = LindbladModel(H_QUBIT, np.zeros((2, 2)), [(0.1, ket_bra(0, 1, 2))])
    rho = np.eye(2) / 2
    P = bt.charging_power_open(rho, H_QUBIT, generator(model, rho))
    assert P == pytest.approx(-0.05, abs=1e-15)
    # dephasing in the energy eigenbasis
    model = LindbladModel(H_QUBIT, np.zeros((2, 2)), [(0.3, sigma_z())])
    rho = rand_density(np.random.default_rng(14), 2)
    assert bt.charging_power_open(rho, H_QUBIT, generator(model, rho)) == pytest.approx(0, abs=1e-15)


def test_power_open_at_fixed_point():
    model = LindbladModel(H_QUBIT, np.zeros((2, 2)), [(0.1, ket_bra(0, 1, 2))])
    rho = np.diag([1.0, 0.0])
    assert bt.charging_power_open(rho, H_QUBIT, generator(model, rho)) == 0.0


def test_power_open_rejects_trace_or_hermiticity_errors():
    with pytest.raises(ValueError):
        bt.charging_power_open(np.eye(2) / 2, H_QUBIT, np.eye(2))
    with pytest.raises(ValueError):
        bt.charging_power_open(np.eye(2) / 2, H_QUBIT, np.array([[0, 1], [0, 0]]))


@given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1))
def test_power_open_infinite_bath_is_energy_rate(n, seed):
    rng = np.random.default_rng(seed)
    H = rand_herm(rng, n)
    model = LindbladModel(H, rand_herm(rng, n), [(0.2, rng.normal(size=(n, n)))])
    rho = rand_density(rng, n)
    d = generator(model, rho)
    rep = bt.free_energy_operator(rho, H, bt.INFINITE)
    assert bt.charging_power_open(rho, rep.F, d) == np.sum(d.data.T * H).real


@given(st.integers(0, 2 ** 32 - 1))
def test_zero_sigma_F_means_zero_power(seed):
    rng = np.random.default_rng(seed)
    # battery in a single F eigenvalue: a projector onto an eigenvector of H_W
    H_W = rand_herm(rng, 3)
    _, U = np.linalg.eigh(H_W)
    psi = U[:, int(rng.integers(3))]
    rho = tensor_product(rand_density(rng, 2), np.outer(psi, psi.conj()))
    rep = bt.free_energy_operator(np.outer(psi, psi.conj()), H_W, bt.INFINITE)
    assert rep.sigma_F < 1e-7
    assert abs(bt.charging_power_closed(rho, rep.F, rand_herm(rng, 6))) < 1e-10


@given(st.integers(1, 6), st.floats(0.1, 5.0), st.integers(0, 2 ** 32 - 1))
def test_sigma_F_squared_is_variance(n, beta, seed):
    rng = np.random.default_rng(seed)
    rho = rand_density(rng, n)
    H = rand_herm(rng, n)
    rep = bt.free_energy_operator(rho, H, bt.ReferenceBath(beta))
    F = rep.F.data
    var = np.trace(rho @ F @ F).real - np.trace(rho @ F).real ** 2
    assert abs(rep.sigma_F ** 2 - max(var, 0)) < 1e-10 * max(1.0, abs(var))
    assert rep.F.is_hermitian()
