import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import expr_trees, fd_derivative
from onefactor.expr import (
    Const,
    DomainError,
    Integral,
    LinearFlow,
    ParseError,
    T,
    UnboundSymbolError,
    UnknownFunctionError,
    UnknownIdentifierError,
    X,
    adaptive_simpson,
    antiderivative,
    arctan,
    exp,
    ln,
    parse,
    sin,
    sqrt,
    substitute,
    to_string,
)
from onefactor.expr.quad import NumericFunction, QuadratureError


@pytest.mark.parametrize(
    "text, x, expected",
    [
        ("2*x + 3", 0.7, 4.4),
        ("x^2^3", 0.7, 0.7**8),
        ("-x^2", 0.7, -0.49),
        ("exp(-x)/(1 + x)", 0.7, math.exp(-0.7) / 1.7),
        ("sqrt(4)*ln(exp(x))", 0.7, 1.4),
        ("arctan(tan(x))", 0.7, 0.7),
        ("pow(x, 3)", 0.7, 0.343),
    ],
)
def test_parse_and_evaluate(text, x, expected):
    assert parse(text).eval({"x": x}) == pytest.approx(expected, rel=1e-14)


def test_constants_are_bound_at_parse_time():
    e = parse("kappa*(mu - x)", {"kappa": 2.0, "mu": 0.5})
    assert e.free_symbols() == frozenset({"x"})
    assert e.eval({"x": 0.25}) == pytest.approx(0.5)


@pytest.mark.parametrize(
    "text, exc, offset",
    [
        ("1+", ParseError, 2),
        ("(x", ParseError, 2),
        ("x $ 2", ParseError, 2),
        ("foo(x)", UnknownFunctionError, 0),
        ("y + 1", UnknownIdentifierError, 0),
    ],
)
def test_parse_errors_report_offset(text, exc, offset):
    with pytest.raises(exc) as info:
        parse(text)
    assert info.value.offset == offset


def test_domain_errors():
    with pytest.raises(DomainError):
        ln(X).eval({"x": -1.0})
    with pytest.raises(DomainError):
        sqrt(X).eval({"x": np.array([1.0, -2.0])})
    with pytest.raises(UnboundSymbolError):
        X.eval({})


def test_smart_constructors_fold():
    assert to_string(Const(0) + X) == "x"
    assert to_string(Const(1) * X) == "x"
    assert (Const(0) * X).eval({}) == 0
    assert (Const(2) + Const(3)).eval({}) == 5


@settings(max_examples=150, deadline=None)
@given(expr_trees)
def test_derivative_matches_finite_difference(e):
    f = lambda v: float(e.eval({"x": v, "t": 0.3}))  # noqa: E731
    d = e.diff("x")
    try:
        ref = fd_derivative(f, 0.7)
        val = float(d.eval({"x": 0.7, "t": 0.3}))
    except (DomainError, OverflowError, ZeroDivisionError):
        assume(False)
    assume(np.isfinite(ref) and abs(ref) < 1e6)
    assert val == pytest.approx(ref, rel=1e-5, abs=1e-6)


@settings(max_examples=150, deadline=None)
@given(expr_trees)
def test_print_parse_round_trip(e):
    again = parse(to_string(e))
    pts = {"x": np.array([-0.4, 0.7, 1.3]), "t": 0.3}
    try:
        a = np.broadcast_to(e.eval(pts), (3,))
    except (DomainError, OverflowError):
        assume(False)
    assume(np.all(np.isfinite(a)))
    np.testing.assert_allclose(np.broadcast_to(again.eval(pts), (3,)), a, rtol=1e-12, atol=1e-14)
    assert to_string(again) == to_string(e)


@settings(max_examples=60, deadline=None)
@given(expr_trees, st.floats(-2, 2))
def test_substitute_agrees_with_rebinding(e, shift):
    moved = substitute(e, "x", X + shift)
    try:
        a = e.eval({"x": 0.2 + shift, "t": 0.1})
    except (DomainError, OverflowError):
        assume(False)
    assume(np.isfinite(a))
    assert moved.eval({"x": 0.2, "t": 0.1}) == pytest.approx(a, rel=1e-12, abs=1e-14)


def test_mixed_partials_commute():
    e = exp(X * T) * sin(X + 2 * T)
    pts = {"x": 0.3, "t": -0.2}
    assert e.diff("x").diff("t").eval(pts) == pytest.approx(e.diff("t").diff("x").eval(pts), rel=1e-13)


def test_linear_flow_derivative():
    gen = np.array([[0.0, 1.0], [-1.0, 0.0]])
    flow = LinearFlow([1.0, 0.0], gen, [0.0, 1.0])  # sin(t)
    ts = np.linspace(0, 3, 7)
    np.testing.assert_allclose(flow.eval({"t": ts}), np.sin(ts), atol=1e-13)
    np.testing.assert_allclose(flow.diff("t").eval({"t": ts}), np.cos(ts), atol=1e-13)
    assert flow.diff("x").eval({"t": 1.0}) == 0


# -- quadrature -------------------------------------------------------------------


@pytest.mark.parametrize(
    "f, a, b, exact",
    [
        (np.exp, 0.0, 1.0, math.e - 1),
        (np.sin, 0.0, math.pi, 2.0),
        (lambda v: 1 / (1 + v * v), -1.0, 1.0, math.pi / 2),
        (lambda v: v**4, -1.0, 2.0, 33 / 5),
    ],
)
def test_adaptive_simpson(f, a, b, exact):
    assert adaptive_simpson(f, a, b, 1e-12) == pytest.approx(exact, abs=1e-10)


def test_adaptive_simpson_reversed_and_empty():
    assert adaptive_simpson(np.exp, 1.0, 0.0, 1e-12) == pytest.approx(1 - math.e, abs=1e-10)
    assert adaptive_simpson(np.exp, 0.5, 0.5, 1e-12) == 0


def test_numeric_antiderivative_against_closed_form():
    F = antiderivative(1 / (1 + 0.3 * sin(X)), "x", 0.0, 1e-12)
    r = math.sqrt(1 - 0.09)
    exact = lambda v: 2 / r * (np.arctan((np.tan(v / 2) + 0.3) / r) - math.atan(0.3 / r))  # noqa: E731
    xs = np.linspace(-1.5, 1.5, 301)
    np.testing.assert_allclose(F(xs), exact(xs), atol=1e-10)
    assert isinstance(F(0.4), float)


def test_integral_leaf_differentiates_to_integrand():
    leaf = NumericFunction(exp(-X * X), "x", 0.0).as_expr()
    assert isinstance(leaf, Integral)
    assert leaf.diff("x").eval({"x": 0.5}) == pytest.approx(math.exp(-0.25))
    assert leaf.eval({"x": 0.0}) == pytest.approx(0.0, abs=1e-15)


def test_singular_integrand_raises():
    with pytest.raises(QuadratureError):
        antiderivative(1 / X, "x", 1.0)(np.array([-1.0]))


def test_arctan_helper():
    assert arctan(X).diff("x").eval({"x": 2.0}) == pytest.approx(0.2)
