import json
import math

import numpy as np
import pytest

from continuum_backstep.grids import Grid1D
from continuum_backstep.params import (
    EXAMPLE_NAME,
    ParameterError,
    ParamsN,
    TabulatedField,
    example_params_continuum,
    example_params_n,
    get_params,
    interpolate_params,
    lift_params,
    load_params_json,
    param_error,
    params_to_json,
    sample_params,
)


def _reference_fields(n, x):
    """The worked example written out channel by channel."""
    i = np.arange(1, n + 1)
    s = i / n
    sigma = np.array([[x**3 * (x + 1) * (a - 0.5) * (b - 0.5) for b in s] for a in s])
    w = np.array([x * (x + 1) * math.exp(x) * (a - 0.5) for a in s])
    theta = np.array([-70 * math.exp(35 * x / math.pi**2) * a * (a - 1) for a in s])
    q = np.cos(2 * math.pi * i / n)
    return sigma, w, theta, q


@pytest.mark.parametrize("n", [1, 2, 5])
@pytest.mark.parametrize("x", [0.0, 0.37, 1.0])
def test_example_fields_match_formulas(n, x):
    pn = example_params_n(n)
    tab = pn.tabulate(np.array([x]))
    sigma, w, theta, q = _reference_fields(n, x)
    np.testing.assert_allclose(tab["sigma"][..., 0], sigma, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(tab["w"][:, 0], w, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(tab["theta"][:, 0], theta, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(tab["q"], q, atol=1e-15)
    np.testing.assert_array_equal(tab["lam"], 1.0)
    np.testing.assert_array_equal(tab["mu"], 1.0)


def test_validate_names_bad_channel():
    def lam(x):
        x = np.asarray(x, float)
        return np.stack([np.ones_like(x), 0.5 - x])

    z = lambda x: np.zeros((2,) + np.shape(x))  # noqa: E731
    pn = ParamsN(2, lam=lam, mu=lambda x: np.ones(np.shape(x)),
                 sigma=lambda x: np.zeros((2, 2) + np.shape(x)), w=z, theta=z, q=[0, 0])
    with pytest.raises(ParameterError, match="lambda_2"):
        pn.validate(Grid1D(11))


def test_n_and_q_checked():
    with pytest.raises(ParameterError):
        example_params_n(0)
    with pytest.raises(ParameterError):
        ParamsN(2, lam=None, mu=None, sigma=None, w=None, theta=None, q=[1.0])


def test_central_difference_fallback():
    z = lambda x: np.zeros((1,) + np.shape(x))  # noqa: E731
    pn = ParamsN(1, lam=lambda x: (1 + np.asarray(x) ** 2)[None], mu=lambda x: 2 + np.sin(x),
                 sigma=lambda x: np.zeros((1, 1) + np.shape(x)), w=z, theta=z, q=[0.3])
    x = np.linspace(0, 1, 7)
    # one-sided at the ends, so O(step) there
    np.testing.assert_allclose(pn.lam_x(x)[0], 2 * x, atol=1e-5)
    np.testing.assert_allclose(pn.mu_x(x), np.cos(x), atol=1e-5)


@pytest.mark.parametrize("n", [1, 3, 8])
def test_sampled_continuum_matches_discrete_example(n):
    x = np.linspace(0, 1, 33)
    a = sample_params(example_params_continuum(), n).tabulate(x)
    b = example_params_n(n).tabulate(x)
    for key in a:
        np.testing.assert_allclose(a[key], b[key], rtol=1e-14, atol=1e-14)


def test_lift_then_sample_round_trip():
    pn = example_params_n(6)
    back = sample_params(lift_params(pn), 6)
    x = np.linspace(0, 1, 17)
    a, b = pn.tabulate(x), back.tabulate(x)
    for key in ("lam", "sigma", "w", "theta", "q"):
        np.testing.assert_array_equal(a[key], b[key])


def test_interpolation_reproduces_channel_values():
    pn = example_params_n(5)
    pc = interpolate_params(pn)
    x = np.linspace(0, 1, 9)
    tab = pn.tabulate(x)
    ys = np.arange(1, 6) / 5
    np.testing.assert_allclose(pc.theta(x[None, :], ys[:, None]), tab["theta"], atol=1e-10)
    np.testing.assert_allclose(pc.q(ys), tab["q"], atol=1e-12)
    with pytest.raises(ParameterError):
        interpolate_params(example_params_n(13))


def test_param_error_first_order_in_n():
    pc = example_params_continuum()
    g = Grid1D(65)
    errs = [param_error(pc, lift_params(example_params_n(n)), g).theta for n in (4, 8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders > 0.8) and np.all(orders < 1.2)


def test_json_round_trip(tmp_path):
    pn = example_params_n(3)
    path = tmp_path / "p.json"
    path.write_text(json.dumps(params_to_json(pn, m=129)))
    back = load_params_json(str(path))
    x = np.linspace(0, 1, 129)
    a, b = pn.tabulate(x), back.tabulate(x)
    for key in ("lam", "mu", "sigma", "w", "theta", "q"):
        np.testing.assert_allclose(a[key], b[key], rtol=1e-15, atol=1e-15)
    with pytest.raises(ParameterError):
        get_params(str(path), 4)
    assert get_params(EXAMPLE_NAME, 4).n == 4


def test_json_missing_key():
    obj = params_to_json(example_params_n(2), m=5)
    del obj["theta"]
    with pytest.raises(ParameterError, match="theta"):
        load_params_json(obj)


def test_tabulated_field_rejects_unsorted():
    with pytest.raises(ParameterError):
        TabulatedField([0.0, 0.5, 0.4], [1, 2, 3])
    f = TabulatedField.from_json(2.5)
    assert f(0.3) == 2.5


def test_digest_is_stable_and_sensitive():
    assert example_params_n(4).digest() == example_params_n(4).digest()
    assert example_params_n(4).digest() != example_params_n(5).digest()
