import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onefactor.expr import Const, S, X, exp, parse, sin, sqrt
from onefactor.geometry import (
    Grid,
    Metric1D,
    ModelError,
    ModelSpec,
    constant_model,
    drift_from_model,
    homothetic_basis,
    homothetic_factor,
    log_transform,
    market_term,
)


@pytest.mark.parametrize(
    "kw",
    [
        {"x_min": 1.0, "x_max": 0.0},
        {"n_x": 8},
        {"t_min": 1.0, "t_max": 0.0},
        {"n_t": 1},
    ],
)
def test_grid_validation(kw):
    with pytest.raises(ModelError):
        Grid(**kw)


def test_grid_spacing():
    g = Grid(-1, 1, 401, 0, 2, 201)
    assert g.dx == pytest.approx(0.005)
    assert g.dt == pytest.approx(0.01)
    assert g.x[0] == -1 and g.x[-1] == 1


def test_model_needs_drift_or_market():
    with pytest.raises(ModelError):
        ModelSpec(sigma=Const(1.0))
    with pytest.raises(ModelError):
        ModelSpec(sigma=Const(1.0), drift=X, coords="S")
    with pytest.raises(ModelError):
        ModelSpec(sigma=Const(1.0), drift=X, coords="y")


def test_u_is_exact_for_constant_sigma():
    u = Metric1D(Const(0.5)).u(x_ref=0.2, offset=1.0)
    assert u.eval({"x": 1.2}) == pytest.approx(3.0)


def test_u_inverts_sigma():
    metric = Metric1D(1 + 0.3 * sin(X))
    u = metric.u()
    xs = np.linspace(-1, 1, 11)
    np.testing.assert_allclose(u.diff("x").eval({"x": xs}) * metric.sigma.eval({"x": xs}), 1.0, rtol=1e-14)


@pytest.mark.parametrize("sigma", ["1", "1 + x^2", "exp(x/2)", "2 + sin(3*x)"])
def test_homothetic_factor_readback(sigma):
    metric = Metric1D(parse(sigma))
    k1, h = homothetic_basis(metric)
    xs = np.linspace(-1, 1, 41)
    np.testing.assert_allclose(homothetic_factor(k1, xs), 0.0, atol=1e-9)
    np.testing.assert_allclose(homothetic_factor(h, xs), 1.0, rtol=1e-8)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.1, 3), st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 1)
)
def test_drift_reconstruction(kappa, mu, lam, s0):
    model = ModelSpec(sigma=Const(s0) * (1 + 0.2 * X * X), kappa=Const(kappa), mu=Const(mu), lam=Const(lam))
    C = drift_from_model(model)
    xs = np.linspace(-1, 1, 21)
    back = market_term(C, model.sigma).eval({"x": xs})
    np.testing.assert_allclose(back, kappa * (mu - lam - xs), rtol=1e-10, atol=1e-12)


def test_constant_model_drift():
    model = constant_model(2.0, 0.3, 0.1, 0.2)
    C = drift_from_model(model)
    xs = np.linspace(-1, 1, 5)
    expected = -2.0 * (0.2 - xs) + 0.02
    np.testing.assert_allclose(C.C_contra.eval({"x": xs}) * np.ones_like(xs), expected, atol=1e-14)
    np.testing.assert_allclose(C.b_eff.eval({"x": xs}) * np.ones_like(xs), -expected, atol=1e-14)


def test_log_transform_substitutes_spot():
    model = ModelSpec(sigma=0.2 * sqrt(S), kappa=Const(1.0), mu=Const(0.0), lam=Const(0.0), coords="S")
    xm = log_transform(model)
    assert xm.coords == "x"
    assert xm.sigma.eval({"x": 1.0}) == pytest.approx(0.2 * np.exp(0.5))


def test_validate_rejects_nonpositive_sigma():
    with pytest.raises(ModelError):
        Metric1D(X).validate(np.linspace(-1, 1, 5))
    with pytest.raises(ModelError):
        drift_from_model(ModelSpec(sigma=X, drift=Const(1.0)), np.linspace(-1, 1, 5))
    Metric1D(exp(X)).validate(np.linspace(-1, 1, 5))
