import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochfeyn import Wavefunction, gaussian, inner, make_grid, norm, to_momentum, to_position
from stochfeyn.grid import MOMENTUM, GridError

from conftest import smooth_state


def test_spacings_small_grid():
    g = make_grid(2 * np.pi, 8)
    assert g.dq == pytest.approx(np.pi / 4)
    assert g.dp == pytest.approx(1.0)
    np.testing.assert_allclose(g.p, np.arange(-4, 4))
    assert g.dq * g.dp * g.N == pytest.approx(2 * np.pi)


def test_spacing_default_grid():
    assert make_grid(40, 512).dq == 0.078125


@pytest.mark.parametrize("L, N", [(10, 7), (10, 4), (10, 48), (0, 8), (-1, 8), (np.inf, 8)])
def test_bad_grid_rejected(L, N):
    with pytest.raises(GridError):
        make_grid(L, N)


def test_position_nodes_start_at_left_edge():
    g = make_grid(40, 512)
    assert g.q[0] == -20.0
    assert g.q[-1] == pytest.approx(20.0 - g.dq)
    assert 0.0 in g.q


def test_zero_transforms_to_zero():
    g = make_grid(40, 512)
    psi = Wavefunction(g, np.zeros(g.N))
    assert np.all(to_momentum(psi).values == 0)


def test_gaussian_is_fixed_point_of_transform():
    g = make_grid(40, 512)
    psi = gaussian(g)
    phi = to_momentum(psi)
    expected = np.pi**-0.25 * np.exp(-g.p**2 / 2)
    assert np.max(np.abs(phi.values - expected)) < 1e-10


def test_shifted_packet_transform_closed_form():
    # (pi)^(-1/4) exp(-(q-c)^2/2 + i k q)  ->  (pi)^(-1/4) exp(-(p-k)^2/2 - i (p-k) c)
    g = make_grid(40, 512)
    c, k = 1.5, -2.0
    phi = to_momentum(gaussian(g, center=c, momentum=k))
    expected = np.pi**-0.25 * np.exp(-(g.p - k) ** 2 / 2 - 1j * (g.p - k) * c)
    assert np.max(np.abs(phi.values - expected)) < 1e-10


def test_round_trip(rng):
    g = make_grid(40, 512)
    psi = Wavefunction(g, rng.normal(size=g.N) + 1j * rng.normal(size=g.N))
    back = to_position(to_momentum(psi))
    assert norm(back - psi) < 1e-12 * norm(psi)


def test_gaussian_normalised_and_inner_with_zero():
    g = make_grid(40, 512)
    psi = gaussian(g)
    assert inner(psi, psi) == pytest.approx(1.0, abs=1e-8)
    assert inner(psi, psi * 0) == 0


def test_parseval():
    g = make_grid(40, 512)
    psi = gaussian(g, center=0.3, width=0.7, momentum=1.1)
    assert abs(norm(psi) - norm(to_momentum(psi))) < 1e-12


def test_inner_is_antilinear_in_first_argument(rng, grid64):
    a = Wavefunction(grid64, smooth_state(rng, grid64))
    b = Wavefunction(grid64, smooth_state(rng, grid64))
    c = 0.3 - 0.7j
    assert inner(a * c, b) == pytest.approx(np.conj(c) * inner(a, b))
    assert inner(a, b * c) == pytest.approx(c * inner(a, b))


def test_wavefunction_validation(grid64):
    with pytest.raises(GridError):
        Wavefunction(grid64, np.zeros(63))
    with pytest.raises(GridError):
        Wavefunction(grid64, np.full(64, np.nan))
    with pytest.raises(GridError):
        Wavefunction(grid64, np.zeros(64), rep="spin")
    psi = Wavefunction(grid64, np.ones(64))
    with pytest.raises(ValueError):
        psi.values[0] = 2.0


def test_mixing_grids_or_representations_fails(grid64):
    psi = gaussian(grid64)
    other = gaussian(make_grid(30, 64))
    with pytest.raises(GridError):
        psi + other
    with pytest.raises(GridError):
        psi - to_momentum(psi)
    with pytest.raises(GridError):
        to_position(psi)
    with pytest.raises(GridError):
        to_momentum(to_momentum(psi))


def test_boundary_mass():
    g = make_grid(40, 512)
    assert gaussian(g).boundary_mass() < 1e-30
    assert gaussian(g, center=19.0).boundary_mass() > 0.1
    with pytest.raises(GridError):
        to_momentum(gaussian(g)).boundary_mass()


def test_weight_by_representation(grid64):
    assert grid64.weight(MOMENTUM) == grid64.dp
    assert grid64.weight("position") == grid64.dq


log2n = st.integers(min_value=3, max_value=10)
seeds = st.integers(min_value=0, max_value=2**32 - 1)
lengths = st.floats(min_value=1.0, max_value=100.0)


@settings(max_examples=40, deadline=None)
@given(log2n, lengths, seeds)
def test_transform_is_unitary(k, L, seed):
    g = make_grid(L, 2**k)
    r = np.random.default_rng(seed)
    psi = Wavefunction(g, r.normal(size=g.N) + 1j * r.normal(size=g.N))
    assert abs(norm(to_momentum(psi)) - norm(psi)) < 1e-10 * norm(psi)
    assert norm(to_position(to_momentum(psi)) - psi) < 1e-12 * norm(psi)


@settings(max_examples=40, deadline=None)
@given(log2n, seeds, st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_transform_is_linear(k, seed, a, b):
    g = make_grid(10.0, 2**k)
    r = np.random.default_rng(seed)
    x = r.normal(size=g.N) + 1j * r.normal(size=g.N)
    y = r.normal(size=g.N) + 1j * r.normal(size=g.N)
    lhs = g.fft(a * x + b * y)
    rhs = a * g.fft(x) + b * g.fft(y)
    scale = 1 + abs(a) * np.linalg.norm(x) + abs(b) * np.linalg.norm(y)
    assert np.linalg.norm(lhs - rhs) < 1e-12 * scale
