"""Invariants checked on random instances."""
import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from batterybench import battery as bt
from batterybench import bounds as bd
from batterybench import engine as en
from batterybench.dynamics import CompositeModel, LindbladModel, generator
from batterybench.opcore import HilbertLayout, Operator, partial_trace, tensor_product
from conftest import rand_complex, rand_density, rand_herm

seeds = st.integers(0, 2 ** 32 - 1)
betas = st.sampled_from([math.inf, 0.25, 1.0, 4.0])
dims = st.lists(st.integers(2, 3), min_size=2, max_size=3)


@given(st.integers(1, 6), st.floats(0.05, 10.0), seeds)
def test_work_is_nonnegative(n, beta, seed):
    rng = np.random.default_rng(seed)
    H = rand_herm(rng, n)
    assert bt.extractable_work(rand_density(rng, n), H, bt.ReferenceBath(beta)) >= -1e-10


@given(st.integers(1, 6), seeds)
def test_zero_temperature_work_is_nonnegative(n, seed):
    rng = np.random.default_rng(seed)
    assert bt.extractable_work(rand_density(rng, n), rand_herm(rng, n), bt.INFINITE) >= -1e-12


@given(st.integers(2, 5), st.floats(0.1, 5.0), seeds)
def test_thermal_state_has_zero_work_and_zero_sigma(n, beta, seed):
    rng = np.random.default_rng(seed)
    H = rand_herm(rng, n)
    bath = bt.ReferenceBath(beta)
    rep = bt.free_energy_operator(bt.thermal_state(H, bath), H, bath)
    assert abs(rep.W_max) < 1e-9
    assert rep.sigma_F < 1e-6


@given(dims, betas, seeds)
def test_isolated_bound_and_chain(ds, beta, seed):
    rng = np.random.default_rng(seed)
    n = int(np.prod(ds))
    rho = Operator(HilbertLayout(tuple(ds)), rand_density(rng, n))
    rho_W = partial_trace(rho, [len(ds) - 1])
    rep = bt.free_energy_operator(rho_W, rand_herm(rng, ds[-1]), bt.ReferenceBath(beta))
    V = rand_herm(rng, n)
    assert bd.bound_isolated(rho, rep, V).slack >= -1e-9
    a, b, c = bd.isolated_chain(rho, rep.F, V)
    assert a <= b + 1e-10 and b <= c + 1e-10


@given(st.integers(2, 5), betas, seeds)
def test_open_bound_with_hermitian_jumps(n, beta, seed):
    rng = np.random.default_rng(seed)
    H_W = rand_herm(rng, n)
    model = LindbladModel(H_W, rand_herm(rng, n, 0.5),
                          [(float(rng.uniform(0, 1)), rand_herm(rng, n))])
    rho = rand_density(rng, n)
    rep = bt.free_energy_operator(rho, H_W, bt.ReferenceBath(beta))
    assert bd.bound_open(rho, rep, model).slack >= -1e-9


@given(st.integers(2, 5), seeds)
def test_power_is_linear_in_generator(n, seed):
    rng = np.random.default_rng(seed)
    H = rand_herm(rng, n)
    rho = rand_density(rng, n)
    m1 = LindbladModel(H, rand_herm(rng, n), [(0.3, rand_complex(rng, n))])
    m2 = LindbladModel(H, rand_herm(rng, n), [(0.1, rand_complex(rng, n))])
    d1, d2 = generator(m1, rho), generator(m2, rho)
    F = bt.free_energy_operator(rho, H, bt.ReferenceBath(1.0)).F
    p = bt.charging_power_open(rho, F, Operator(d1.layout, d1.data + d2.data))
    assert abs(p - bt.charging_power_open(rho, F, d1) - bt.charging_power_open(rho, F, d2)) < 1e-10


@given(dims, seeds)
def test_composite_generator_preserves_trace_and_hermiticity(ds, seed):
    rng = np.random.default_rng(seed)
    n = int(np.prod(ds))
    rest = n // ds[-1]
    resets = [(0, float(rng.uniform(0, 1)), rand_density(rng, ds[0]))]
    model = CompositeModel(HilbertLayout(tuple(ds)), rand_herm(rng, rest),
                           rand_herm(rng, ds[-1]), rand_herm(rng, n), resets)
    d = generator(model, rand_density(rng, n)).data
    assert abs(np.trace(d)) < 1e-10
    assert np.max(np.abs(d - d.conj().T)) < 1e-10


@given(seeds)
def test_product_states_have_zero_closed_power(seed):
    # with a product state and a local-only coupling, no power flows
    rng = np.random.default_rng(seed)
    rho = tensor_product(rand_density(rng, 2), rand_density(rng, 3))
    V = np.kron(rand_herm(rng, 2), np.eye(3))
    F = rand_herm(rng, 3)
    assert abs(bt.charging_power_closed(rho, F, V)) < 1e-12


@given(seeds, st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(0.0, 0.2))
def test_moment_equations_match_generator(seed, g, p1, p2):
    rng = np.random.default_rng(seed)
    params = en.EngineParams(ladder_range=(-8, 10), g=g, p1=p1, p2=p2)
    lo = params.ladder_range[0]
    L = params.n_levels
    idx = [s * L + (k - lo) for s in range(4) for k in range(-2, 4)]
    rho = np.zeros((4 * L, 4 * L), dtype=complex)
    rho[np.ix_(idx, idx)] = rand_density(rng, len(idx))
    model = en.build_engine(params)
    rho = Operator(model.layout, rho)
    lhs = en.reduced_from_density(generator(model, rho), params).to_array()
    rhs = en.reduced_rhs(en.reduced_from_density(rho, params), params).to_array()
    assert np.max(np.abs(lhs - rhs)) < 1e-12


@given(st.integers(2, 6), seeds)
def test_eigen_moment_matches_direct(n, seed):
    rng = np.random.default_rng(seed)
    rho, F, L = rand_density(rng, n), rand_herm(rng, n), rand_complex(rng, n)
    a = bd.commutator_second_moment(rho, F, L)
    assert abs(a - bd.commutator_second_moment_eigen(rho, F, L)) <= 1e-9 * max(1.0, a)
