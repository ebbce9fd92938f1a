import math
import warnings

import numpy as np
import pytest

from stochfeyn import builtin, make_grid
from stochfeyn.ensemble import (EnsembleError, ExclusionPolicyError, ExperimentSpec, fit_convergence,
                                is_monotone, make_psi0, martingale_report, run)
from stochfeyn.quantize import quantize_exp_symbol
from stochfeyn.reference import hamiltonian_propagator

SMALL = dict(L=20.0, N=64, t=1.0)


@pytest.fixture(autouse=True)
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def timing_free(st):
    d = st.to_dict()
    d.pop("wall_time")
    d.pop("per_trajectory_time")
    # repr is exact for floats and treats nan consistently
    return repr(d)


def test_noiseless_run_is_split_step_error():
    spec = ExperimentSpec(symbol="gaussian_well", n_list=(8, 16, 32), M=3, ref_substeps=4, **SMALL)
    st = run(spec)
    g = make_grid(20, 64)
    psi0 = make_psi0(g, spec.psi0).values
    exact = hamiltonian_propagator(builtin("gaussian_well"), g, 1.0) @ psi0
    for j, n in enumerate(spec.n_list):
        Y = quantize_exp_symbol(builtin("gaussian_well"), 1.0 / n, 0.0, g)
        phi = psi0
        for _ in range(n):
            phi = Y.apply_array(phi)
        expected = np.sum(np.abs(phi - exact) ** 2) * g.dq
        assert st.w_mean[j] == pytest.approx(expected, rel=1e-8)
        assert st.w_stderr[j] < 1e-15 * max(1.0, st.w_mean[j]) + 1e-20
        assert st.norm2_stderr[j] < 1e-14
    assert st.ref_norm2_mean == pytest.approx(st.norm0_sq, abs=1e-12)


def test_smoke_shapes_and_determinism():
    spec = ExperimentSpec(symbol="gaussian_well", symbol_params=dict(mu1=0.25, mu2=0.25),
                          n_list=(8,), M=2, ref_substeps=4, **SMALL)
    a, b = run(spec), run(spec)
    assert len(a.w_mean) == len(a.w_stderr) == len(a.norm2_mean) == 1
    assert math.isnan(a.order)
    assert a.excluded == 0 and a.M == 2
    assert timing_free(a) == timing_free(b)
    assert a.wall_time > 0 and a.per_trajectory_time > 0


def test_statistics_independent_of_worker_count():
    spec = ExperimentSpec(symbol="bounded_coupled", symbol_params=dict(mu1=0.25, mu2=0.25),
                          n_list=(4, 8, 16), M=120, ref_substeps=2, **SMALL)
    assert timing_free(run(spec, workers=1)) == timing_free(run(spec, workers=3))


def test_noisy_run_decreases():
    spec = ExperimentSpec(symbol="gaussian_well", symbol_params=dict(mu1=0.25, mu2=0.25),
                          n_list=(8, 16, 32, 64), M=40, ref_substeps=8, **SMALL)
    st = run(spec)
    assert st.monotone and st.order > 0
    assert all(s >= 0 for s in st.w_stderr + st.norm2_stderr)
    lo, hi = st.order_ci
    assert lo <= st.order <= hi
    assert all(p >= 1 for p in st.step_norm_proxy)


@pytest.mark.parametrize("kwargs", [
    dict(n_list=(8, 24)), dict(n_list=(16, 8)), dict(n_list=(6, 12)), dict(n_list=()),
    dict(M=1), dict(tau=0.5), dict(scheme="rk4"), dict(ref_substeps=3),
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ExperimentSpec(**kwargs)


def test_reference_resolution():
    assert ExperimentSpec(n_list=(8, 16, 32), ref_substeps=16).n_ref == 512


def test_make_psi0():
    g = make_grid(20, 64)
    assert make_psi0(g).values[32] == pytest.approx(np.pi**-0.25)
    with pytest.raises(ValueError):
        make_psi0(g, {"kind": "plane_wave"})


def test_fit_recovers_power_law():
    n = [8, 16, 32, 64, 128]
    order, (lo, hi), dropped = fit_convergence(n, [3.0 / x for x in n])
    assert order == pytest.approx(1.0) and not dropped
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)


def test_fit_drops_polluted_coarsest_point():
    n = [8, 16, 32, 64, 128]
    rng = np.random.default_rng(0)
    w = [2.0 / x * (1 + 0.01 * rng.normal()) for x in n]
    w[0] *= 10
    order, _, dropped = fit_convergence(n, w)
    assert dropped and order == pytest.approx(1.0, abs=0.05)


def test_monotone_rule():
    assert is_monotone([4, 3, 2, 1], [0.1] * 4)
    assert is_monotone([4, 3, 3.05, 1], [0.1] * 4)
    assert not is_monotone([4, 3, 3.5, 1], [0.1] * 4)
    assert not is_monotone([4, 3, 3.05, 3.1], [0.1] * 4)


def test_martingale_rejects_coupled_symbols():
    with pytest.raises(EnsembleError):
        martingale_report(ExperimentSpec(symbol="bounded_coupled", n_list=(8,), M=2, **SMALL))


def test_martingale_noiseless_is_exact():
    rep = martingale_report(ExperimentSpec(symbol="gaussian_well", n_list=(8, 16), M=2, ref_substeps=2, **SMALL))
    assert rep["max_abs_diff"] < 1e-10
    assert rep["z_product"] == [0.0, 0.0] and rep["z_reference"] == 0.0


def test_martingale_constant_position_noise():
    # k = 1: ||phi(t)||^2 = exp(-2 sqrt(mu1) W1(t) - 2 mu1 t) ||phi0||^2, whose mean is ||phi0||^2
    spec = ExperimentSpec(symbol="gaussian_well", symbol_params=dict(mu1=0.25, k_width=1e8),
                          n_list=(8, 16), M=1000, ref_substeps=2, **SMALL)
    rep = martingale_report(spec)
    assert all(abs(z) < 4 for z in rep["z_product"])
    assert abs(rep["z_reference"]) < 4


def test_blow_ups_beyond_policy_fail_the_run():
    spec = ExperimentSpec(symbol="gaussian_well", n_list=(8,), M=2, scheme="euler-maruyama", ref_substeps=8,
                          L=40.0, N=512)
    with pytest.raises(ExclusionPolicyError):
        run(spec)
