import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from continuum_backstep.continuum import example_kernel, sample_gains
from continuum_backstep.grids import Grid1D, StateN, norm_E
from continuum_backstep.kernels import solve_exact_kernels
from continuum_backstep.params import ParamsN, example_params_continuum, example_params_n
from continuum_backstep.simulator import (
    Controller,
    SimulationError,
    default_dt,
    example_initial_state,
    feedback,
    feedback_row,
    rhs,
    simulate,
    simulate_continuum,
    transport_oracle,
    travel_time,
    write_trajectory_csv,
)


def _transport_params(q=0.5):
    z = lambda x: np.zeros((1,) + np.shape(x))  # noqa: E731
    return ParamsN(1, lam=lambda x: (1 + 0.5 * np.asarray(x))[None], mu=lambda x: 1.2 - 0.4 * np.asarray(x),
                   sigma=lambda x: np.zeros((1, 1) + np.shape(x)), w=z, theta=z, q=[q])


def test_controller_needs_exactly_one_law():
    with pytest.raises(SimulationError):
        Controller(tag="x")
    with pytest.raises(SimulationError):
        Controller(tag="x", u_of_t=lambda t: 0.0, gains=np.zeros((2, 3)))
    assert Controller.open_loop(2.0).u_of_t(5.0) == 2.0


def test_travel_time_against_logarithm():
    assert travel_time(lambda x: 1 + x, 0.0, 1.0) == pytest.approx(math.log(2), abs=1e-9)


def test_transport_oracle_constant_speed():
    ic = lambda x: x**2  # noqa: E731
    inflow = lambda t: 10 + t  # noqa: E731
    one = lambda x: np.ones_like(np.asarray(x, float))  # noqa: E731
    assert transport_oracle(one, inflow, ic, "right", 0.1, 0.3) == pytest.approx(0.2**2)
    assert transport_oracle(one, inflow, ic, "right", 0.5, 0.3) == pytest.approx(10.2)
    assert transport_oracle(one, inflow, ic, "left", 0.1, 0.3) == pytest.approx(0.4**2)
    assert transport_oracle(one, inflow, ic, "left", 0.9, 0.3) == pytest.approx(10.2)
    with pytest.raises(ValueError):
        transport_oracle(one, inflow, ic, "up", 0.1, 0.3)


def test_zero_state_stays_zero():
    pn = example_params_n(3)
    g = Grid1D(33)
    tr = simulate(pn, Controller.open_loop(0.0), StateN.zeros(3, 33), 1.0, g)
    assert np.all(tr.u == 0) and np.all(tr.v == 0)


def test_end_time_hit_exactly_and_cfl_enforced():
    pn = example_params_n(2)
    g = Grid1D(33)
    ic = example_initial_state(pn, g)
    tr = simulate(pn, Controller.open_loop(0.0), ic, 0.7, g, save_stride=3)
    assert tr.times[-1] == pytest.approx(0.7, abs=1e-14)
    with pytest.raises(SimulationError, match="CFL"):
        simulate(pn, Controller.open_loop(0.0), ic, 0.7, g, dt=2 * default_dt(pn, g))
    with pytest.raises(SimulationError):
        simulate(pn, Controller.open_loop(0.0), StateN.zeros(3, 33), 0.7, g)


def test_boundary_conditions_imposed():
    pn = example_params_n(4)
    g = Grid1D(33)
    tr = simulate(pn, Controller.open_loop(lambda t: math.sin(t)), example_initial_state(pn, g),
                  1.0, g, save_stride=5)
    np.testing.assert_allclose(tr.u[:, :, 0], tr.v[:, 0:1] * pn.q[None, :], atol=1e-14)
    np.testing.assert_allclose(tr.v[:, -1], np.sin(tr.times), atol=1e-14)


def test_transport_first_order_against_characteristics():
    pn = _transport_params()
    U = lambda t: 0.5 * math.sin(3 * t) ** 2  # noqa: E731
    prof = lambda x: np.sin(np.pi * np.asarray(x)) ** 2  # noqa: E731
    mu = lambda x: 1.2 - 0.4 * np.asarray(x)  # noqa: E731
    lam = lambda x: 1 + 0.5 * np.asarray(x)  # noqa: E731

    def v_ex(t, x):
        return transport_oracle(mu, U, prof, "left", t, x)

    def u_ex(t, x):
        return transport_oracle(lam, lambda s: 0.5 * v_ex(s, 0.0), prof, "right", t, x)

    errs = []
    for m in (64, 128):
        g = Grid1D(m)
        x = g.points
        tr = simulate(pn, Controller.open_loop(U), StateN(prof(x)[None], prof(x)), 0.5, g)
        ue = np.array([u_ex(0.5, xx) for xx in x])
        ve = np.array([v_ex(0.5, xx) for xx in x])
        errs.append(norm_E(StateN(tr.u[-1] - ue[None], tr.v[-1] - ve), g))
    assert 0.7 <= math.log2(errs[0] / errs[1]) <= 1.3


def test_feedback_matches_recorded_control():
    pn = example_params_n(2)
    g = Grid1D(33)
    kn = solve_exact_kernels(pn, 33)
    tr = simulate(pn, Controller.from_kernels(kn, g), example_initial_state(pn, g), 1.0, g,
                  save_stride=4)
    for j in range(len(tr)):
        assert feedback(kn, tr.state(j), g) == pytest.approx(tr.controls[j], rel=1e-12, abs=1e-12)
    with pytest.raises(ValueError):
        feedback(kn, StateN.zeros(2, 17), Grid1D(17))
    assert feedback_row(kn, Grid1D(17)).shape == (3, 17)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_rhs_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    pn = example_params_n(3)
    g = Grid1D(17)
    s1 = StateN(rng.normal(size=(3, 17)), rng.normal(size=17))
    s2 = StateN(rng.normal(size=(3, 17)), rng.normal(size=17))
    U1, U2 = rng.normal(size=2)
    lhs = rhs(pn, a * s1 + b * s2, g, a * U1 + b * U2)
    r1, r2 = rhs(pn, s1, g, U1), rhs(pn, s2, g, U2)
    np.testing.assert_allclose(lhs.u, a * r1.u + b * r2.u, atol=1e-9)
    np.testing.assert_allclose(lhs.v, a * r1.v + b * r2.v, atol=1e-9)


def test_single_channel_sampled_loop_grows():
    pn = example_params_n(1)
    g = Grid1D(64)
    ctrl = Controller.from_gains(sample_gains(example_kernel(), 1, g), tag="sampled")
    tr = simulate(pn, ctrl, example_initial_state(pn, g), 20.0, g, save_stride=20)
    assert tr.norms[-1] > tr.norms[0]


def test_proxy_with_matching_resolution_is_the_n_system():
    g = Grid1D(33)
    pn = example_params_n(4)
    a = simulate(pn, Controller.open_loop(0.0), example_initial_state(pn, g), 0.5, g)
    b = simulate_continuum(example_params_continuum(), 4, Controller.open_loop(0.0),
                           lambda x, y: np.cos(2 * np.pi * y) + 0 * x, np.ones_like, 0.5, g)
    np.testing.assert_allclose(b.u, a.u, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(b.v, a.v, rtol=1e-13, atol=1e-13)


def test_trajectory_csv_is_exact_and_deterministic(tmp_path):
    pn = example_params_n(2)
    g = Grid1D(17)
    tr = simulate(pn, Controller.open_loop(0.3), example_initial_state(pn, g), 0.5, g)
    write_trajectory_csv(tr, tmp_path / "a.csv")
    tr2 = simulate(pn, Controller.open_loop(0.3), example_initial_state(pn, g), 0.5, g)
    write_trajectory_csv(tr2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert [float(r["E_norm"]) for r in rows] == tr.norms.tolist()
