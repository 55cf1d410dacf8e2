import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from continuum_backstep.analysis import (
    DecayFitError,
    LyapunovConfig,
    backstepping_beta,
    compare_controls,
    compare_solutions,
    continuum_constants,
    decay_fit,
    default_lyapunov_config,
    lyapunov_bounds,
    lyapunov_series,
    lyapunov_V,
    traverse_time,
)
from continuum_backstep.continuum import example_kernel
from continuum_backstep.grids import Grid1D, StateN, TriGrid
from continuum_backstep.kernels import KernelsN, solve_exact_kernels
from continuum_backstep.params import example_params_continuum, example_params_n
from continuum_backstep.simulator import (
    Controller,
    Trajectory,
    example_initial_state,
    simulate,
    simulate_continuum,
)


def _synthetic(times, norms, controls=None):
    T = len(times)
    g = Grid1D(3)
    return Trajectory(times=np.asarray(times, float), u=np.zeros((T, 1, 3)), v=np.zeros((T, 3)),
                      controls=np.zeros(T) if controls is None else np.asarray(controls, float),
                      norms=np.asarray(norms, float), grid=g)


def test_beta_with_zero_kernels_is_v():
    g = Grid1D(9)
    kn = KernelsN(2, np.zeros((3, 9, 9)), TriGrid(9))
    s = StateN(np.ones((2, 9)), np.linspace(0, 1, 9))
    np.testing.assert_array_equal(backstepping_beta(s, kn, g), s.v)


def test_beta_of_constant_kernels():
    # k^i = a, k^{n+1} = b, u = 1, v = 1  ->  beta(x) = 1 - (a + b) x
    m = 17
    tri = TriGrid(m)
    K = np.where(tri.mask, 1.0, 0.0)[None].repeat(3, 0)
    K[:2] *= 2.0
    K[2] *= -0.5
    s = StateN(np.ones((2, m)), np.ones(m))
    np.testing.assert_allclose(backstepping_beta(s, KernelsN(2, K, tri), tri.grid),
                               1 - 1.5 * tri.points, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.integers(0, 1000))
def test_V_is_quadratic(c, seed):
    rng = np.random.default_rng(seed)
    pn = example_params_n(3)
    g = Grid1D(17)
    cfg = LyapunovConfig(0.3, 2.0)
    a, b = rng.normal(size=(3, 17)), rng.normal(size=17)
    assert lyapunov_V(c * a, c * b, pn, cfg, g) == pytest.approx(
        c * c * lyapunov_V(a, b, pn, cfg, g), rel=1e-12, abs=1e-12)


def test_V_of_constants():
    pn = example_params_n(2)
    g = Grid1D(2001)
    cfg = LyapunovConfig(0.5, 3.0)
    a = np.full((2, g.m), 2.0)
    b = np.full(g.m, 1.5)
    expected = 0.5 * 4.0 * (1 - math.exp(-3.0)) / 3.0 + 1.5 * 2.25
    assert lyapunov_V(a, b, pn, cfg, g) == pytest.approx(expected, rel=1e-6)
    lo, hi = lyapunov_bounds(pn, cfg, g)
    assert lo == pytest.approx(0.5 * math.exp(-3.0)) and hi == pytest.approx(2.0)


def test_config_validation_and_default():
    with pytest.raises(ValueError):
        LyapunovConfig(0.0, 1.0)
    cfg = default_lyapunov_config(example_params_n(4))
    assert cfg.p > 0 and cfg.delta1 >= 1


def test_traverse_time_of_example_is_two():
    assert traverse_time(example_params_n(5)) == pytest.approx(2.0, abs=1e-14)


def test_decay_fit_recovers_rate():
    t = np.linspace(0, 10, 41)
    fit = decay_fit(_synthetic(t, 3.0 * np.exp(-0.7 * t)), t_start=2.0)
    assert fit.c == pytest.approx(0.7, rel=1e-12)
    assert fit.M == pytest.approx(1.0, rel=1e-10)
    assert fit.window == (2.0, 10.0)
    with pytest.raises(DecayFitError):
        decay_fit(_synthetic(t[:3], np.ones(3)), t_start=0.0)
    with pytest.raises(DecayFitError):
        decay_fit(_synthetic(t, np.zeros(41)), t_start=0.0)


def test_compare_controls():
    t = np.linspace(0, 1, 101)
    a = _synthetic(t, np.ones(101), np.sin(t))
    b = _synthetic(t, np.ones(101), np.sin(t) + 0.25)
    sup, l2 = compare_controls(a, b)
    assert sup == pytest.approx(0.25) and l2 == pytest.approx(0.25)
    with pytest.raises(ValueError):
        compare_controls(a, _synthetic(t[:50], np.ones(50)))


def test_beta_vanishes_at_the_boundary_with_exact_gains():
    pn = example_params_n(2)
    g = Grid1D(65)
    kn = solve_exact_kernels(pn, 65)
    tr = simulate(pn, Controller.from_kernels(kn, g), example_initial_state(pn, g), 1.0, g,
                  save_stride=8)
    V, b1 = lyapunov_series(tr, kn, pn)
    assert np.all(np.abs(b1) <= 1e-10 * tr.norms)
    assert np.all(V > 0)


def test_solution_error_identity_and_checks():
    g = Grid1D(33)
    pn = example_params_n(4)
    trn = simulate(pn, Controller.open_loop(0.0), example_initial_state(pn, g), 0.5, g)
    u0 = lambda x, y: np.cos(2 * np.pi * y) + 0 * x  # noqa: E731
    trc = simulate_continuum(example_params_continuum(), 4, Controller.open_loop(0.0), u0,
                             np.ones_like, 0.5, g)
    assert np.all(compare_solutions(trn, trc, 4) == 0.0)
    trc6 = simulate_continuum(example_params_continuum(), 6, Controller.open_loop(0.0), u0,
                              np.ones_like, 0.5, g)
    with pytest.raises(ValueError):
        compare_solutions(trn, trc6, 4)


def test_solution_error_shrinks_with_n_against_fixed_proxy():
    # proxy fixed at n_y = 32; the n-system approaches it as n grows
    g = Grid1D(128)
    u0 = lambda x, y: np.cos(2 * np.pi * y) + 0 * x  # noqa: E731
    trc = simulate_continuum(example_params_continuum(), 32, Controller.open_loop(0.0), u0,
                             np.ones_like, 2.0, g, save_stride=10)
    errs = []
    for n in (4, 8, 16):
        pn = example_params_n(n)
        trn = simulate(pn, Controller.open_loop(0.0), example_initial_state(pn, g), 2.0, g,
                       save_stride=10)
        errs.append(compare_solutions(trn, trc, n).max())
    assert errs[0] > errs[1] > errs[2]


def test_continuum_constants():
    c = continuum_constants(example_params_continuum(), example_kernel(), m=17, n_y=17)
    assert c["M_lambda"] == 1.0
    assert c["M_W"] == pytest.approx(2 * math.e / 2)
    assert c["M_k"] == pytest.approx(35 * 0.25 * math.exp(35 / math.pi**2))
    assert c["M_kappa"] is None and c["M_c"] is None and c["M_l"] is None
