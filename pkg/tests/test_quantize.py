import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochfeyn import Wavefunction, builtin, gaussian, make_grid, norm, to_momentum, to_position
from stochfeyn.propagator import fit_order
from stochfeyn.quantize import (DENSE_KERNEL, PSymbol, ProductSymbol, QSymbol, QuantizeError, SumSymbol,
                                apply_qp, dense_kernel, factorization_check, quantize, quantize_exp_symbol,
                                verify_box_limit)
from stochfeyn.reference import dense_expm

from conftest import smooth_state


def one(q, p):
    return np.ones(np.broadcast(q, p).shape)


@pytest.mark.parametrize("tau", [0.0, 0.5, 1.0])
def test_unit_symbol_gives_identity(tau, grid64):
    K = dense_kernel(one, tau, grid64)
    assert np.max(np.abs(K - np.eye(64))) < 1e-12


def test_position_symbol_is_multiplication(grid64):
    f = lambda q: np.cos(q) * np.exp(-q * q / 8)
    K = dense_kernel(lambda q, p: f(q) + 0 * p, 0.0, grid64)
    assert np.max(np.abs(K - np.diag(f(grid64.q)))) < 1e-12


def test_canonical_commutator(rng, grid64):
    psi = smooth_state(rng, grid64)
    qp = lambda q, p: q * p
    diff = dense_kernel(qp, 0.0, grid64) @ psi - dense_kernel(qp, 1.0, grid64) @ psi
    assert np.sqrt(np.sum(np.abs(diff - 1j * psi) ** 2) * grid64.dq) < 1e-6


def test_apply_qp_unit_symbol(rng):
    g = make_grid(40, 512)
    psi = Wavefunction(g, rng.normal(size=512) + 1j * rng.normal(size=512))
    assert norm(apply_qp(one, psi) - psi) < 1e-12 * norm(psi)


def test_apply_qp_momentum_symbol(rng, grid64):
    psi = Wavefunction(grid64, smooth_state(rng, grid64))
    g = lambda p: 1 / (1 + p * p)
    expected = to_position(to_momentum(psi).with_values(g(grid64.p) * to_momentum(psi).values))
    assert norm(apply_qp(PSymbol(g), psi) - expected) < 1e-12
    assert norm(apply_qp(lambda q, p: g(p) + 0 * q, psi) - expected) < 1e-12


def test_apply_qp_matches_dense_kernel(rng, grid64):
    sym = lambda q, p: np.exp(-q * q - p * p)
    psi = Wavefunction(grid64, rng.normal(size=64) + 1j * rng.normal(size=64))
    dense = dense_kernel(sym, 0.0, grid64) @ psi.values
    assert np.sqrt(np.sum(np.abs(apply_qp(sym, psi).values - dense) ** 2) * grid64.dq) < 1e-9


@pytest.mark.parametrize("wrap", [
    lambda f, g: ProductSymbol(f, g),
    lambda f, g: SumSymbol(f, g),
    lambda f, g: (lambda q, p: f(q) * g(p)),
])
def test_fast_paths_match_dense_kernel(wrap, grid64):
    f = lambda q: np.exp(-q * q / 4)
    g = lambda p: np.cos(p) / (1 + p * p)
    sym = wrap(f, g)
    K = dense_kernel(lambda q, p: sym(q, p), 0.0, grid64)
    assert np.max(np.abs(quantize(sym, 0.0, grid64).matrix() - K)) < 1e-12


def test_zero_state_maps_to_zero(grid64):
    psi = Wavefunction(grid64, np.zeros(64))
    sym = lambda q, p: np.exp(-q * q - p * p)
    assert np.all(apply_qp(sym, psi).values == 0)
    for tau in (0.0, 0.5, 1.0):
        assert np.all(quantize(sym, tau, grid64).apply(psi).values == 0)


def test_real_separable_symbol_is_self_adjoint(grid64):
    S = builtin("gaussian_well")
    M = quantize(SumSymbol(S.k0, S.h0), 0.0, grid64).matrix()
    assert np.max(np.abs(M - M.conj().T)) < 1e-12


def test_separable_symbols_are_tau_independent(rng, grid64):
    S = builtin("cosine_potential")
    psi = Wavefunction(grid64, smooth_state(rng, grid64))
    sym = SumSymbol(S.k0, S.h0)
    base = quantize(sym, 0.0, grid64, strategy=DENSE_KERNEL).apply(psi)
    for tau in (0.5, 1.0):
        assert norm(quantize(sym, tau, grid64).apply(psi) - base) < 1e-8


def test_strategy_selection(grid64):
    assert quantize(SumSymbol(np.cos, np.sin), 0.0, grid64).strategy == "separable-fast"
    assert quantize(lambda q, p: q * p, 0.0, grid64).strategy == "qp-spectral"
    assert quantize(lambda q, p: q * p, 0.5, grid64).strategy == "dense-kernel"
    with pytest.raises(QuantizeError):
        quantize(one, 0.0, grid64, strategy="magic")
    with pytest.raises(QuantizeError):
        dense_kernel(one, 0.5, make_grid(40, 512))


def test_exp_symbol_zero_step_is_identity(rng, grid64):
    psi = Wavefunction(grid64, smooth_state(rng, grid64))
    for name in ("gaussian_well", "bounded_coupled"):
        op = quantize_exp_symbol(builtin(name), 0.0, 0.0, grid64)
        assert norm(op.apply(psi) - psi) < 1e-12 * norm(psi)


def test_exp_symbol_separable_matches_matrix_exponential(grid64):
    S = builtin("free")
    Y = quantize_exp_symbol(S, 0.1, 0.0, grid64).matrix()
    assert np.max(np.abs(Y - dense_expm(S, 0.1, grid64))) < 1e-8


def test_exp_symbol_coupled_is_chernoff_not_exact():
    g = make_grid(20, 64)
    S = builtin("bounded_coupled")
    vs = [0.2, 0.1, 0.05, 0.025]
    gaps = [np.linalg.norm(quantize_exp_symbol(S, v, 0.0, g).matrix() - dense_expm(S, v, g), 2) for v in vs]
    assert gaps[-1] > 1e-4
    assert fit_order(vs, gaps) > 1.8


@pytest.mark.parametrize("name", ["gaussian_well", "cosine_potential", "free"])
def test_exp_symbol_separable_is_unitary(name, rng):
    g = make_grid(40, 512)
    psi = Wavefunction(g, rng.normal(size=512) + 1j * rng.normal(size=512))
    out = quantize_exp_symbol(builtin(name), 0.37, 0.0, g).apply(psi)
    assert abs(norm(out) - norm(psi)) < 1e-10 * norm(psi)


def test_factorization_with_unit_middle_factor(rng):
    g = make_grid(20, 128)
    psi = Wavefunction(g, smooth_state(rng, g))
    res = factorization_check(lambda q: np.exp(-q * q), one, lambda p: 1 / (1 + p * p), psi)
    assert res < 1e-10


def test_factorization_random_gaussians(rng):
    g = make_grid(20, 128)
    for _ in range(5):
        c = rng.uniform(-2, 2, 4)
        f1 = lambda q, c=c: np.exp(-(q - c[0]) ** 2)
        f2 = lambda q, p, c=c: np.exp(-(q - c[1]) ** 2 - (p - c[2]) ** 2)
        f3 = lambda p, c=c: np.exp(-(p - c[3]) ** 2 / 2)
        psi = Wavefunction(g, smooth_state(rng, g))
        assert factorization_check(f1, f2, f3, psi) < 1e-9 * norm(psi)


def test_factorization_needs_position_then_momentum(rng):
    g = make_grid(20, 128)
    psi = gaussian(g)
    f2 = lambda q, p: np.exp(-q * q - p * p)
    swapped = factorization_check(lambda q, p: np.exp(-p * p), f2, lambda q, p: np.exp(-q * q), psi)
    assert swapped > 1e-2


def test_box_quadrature_converges():
    g = make_grid(20, 128)
    psi = gaussian(g)
    sym = lambda q, p: np.exp(-q * q / 2 - p * p / 2)
    errs = verify_box_limit(sym, psi, [2.0, 4.0, 8.0])
    assert errs[0] > errs[1] > errs[2]
    full = max(g.L / 2, -g.p[0])
    assert verify_box_limit(sym, psi, [full])[0] < 1e-10


def test_box_quadrature_unit_symbol():
    g = make_grid(20, 128)
    assert verify_box_limit(one, gaussian(g), [10.0])[0] < 1e-8


def test_box_extent_checked():
    g = make_grid(20, 128)
    with pytest.raises(QuantizeError):
        verify_box_limit(one, gaussian(g), [100.0])


def test_non_finite_symbol_rejected(grid64):
    with pytest.raises(QuantizeError):
        apply_qp(lambda q, p: np.where(q > 0, np.inf, 1.0) + 0 * p, gaussian(grid64))


complexes = st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), complexes, complexes, st.sampled_from([0.0, 0.5, 1.0]))
def test_quantized_operators_are_linear(seed, a, b, tau):
    g = make_grid(16, 32)
    r = np.random.default_rng(seed)
    x = Wavefunction(g, r.normal(size=32) + 1j * r.normal(size=32))
    y = Wavefunction(g, r.normal(size=32) + 1j * r.normal(size=32))
    op = quantize(lambda q, p: np.exp(-q * q - p * p) + np.sin(q) * np.cos(p), tau, g)
    lhs = op.apply(x * a + y * b)
    rhs = op.apply(x) * a + op.apply(y) * b
    assert norm(lhs - rhs) < 1e-10 * (1 + abs(a) * norm(x) + abs(b) * norm(y))
