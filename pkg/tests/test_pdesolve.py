import math

import numpy as np
import pytest

from onefactor.classify import SymmetryField, build_corollary_symmetries
from onefactor.expr import Const, T, X, ZERO, exp, sqrt
from onefactor.geometry import Grid, Metric1D, ModelSpec, constant_model
from onefactor.pdesolve import (
    FDError,
    FlowError,
    GridSolution,
    ResidualError,
    flow_transport_check,
    grid_residual,
    residual,
    solve_fd,
    symbolic_residual,
    symmetry_residual,
    transported,
)
from onefactor.solutions import corollary_model, invariant_solution, schwartz_solution

HEAT = ModelSpec(sigma=sqrt(Const(2.0)), drift=Const(0.0))


def heat_kernel(t, x, s=0.5):
    # F_t = F_xx from exp(-x^2 / (4 s))
    return np.sqrt(s / (s + t)) * np.exp(-(x**2) / (4 * (s + t)))


def test_residual_detects_perturbation():
    sol = schwartz_solution(2.0, 0.1, 0.3, 0.2)
    grid = Grid(0.5, 2.0, 401, 0.0, 2.0, 401)
    assert residual(sol.model, sol, grid).max <= 1e-8
    bumped = lambda t, s: sol.ln_f(t, s) + 0.01 * s**2  # noqa: E731
    assert residual(sol.model, bumped, grid).max > 1e-3


def test_residual_accepts_expressions_and_callables():
    lnf = X + T  # F_t = F_xx for F = e^{x + t}
    rep = residual(HEAT, lnf, Grid(-1, 1, 101, 0, 1, 101))
    assert rep.max <= 1e-10
    rep2 = residual(HEAT, lambda t, x: x + t, Grid(-1, 1, 101, 0, 1, 101))
    assert rep2.max == pytest.approx(rep.max, abs=1e-14)
    assert set(rep.to_dict()) >= {"max", "rms", "where", "shape"}


def test_residual_rejects_nonfinite():
    with pytest.raises(ResidualError), np.errstate(divide="ignore", invalid="ignore"):
        residual(HEAT, lambda t, x: np.log(x), Grid(-1, 1, 51))


def test_symbolic_and_fd_residual_agree():
    sol = invariant_solution(Metric1D(1 + 0.1 * exp(X)), 1.0, 0.5)
    grid = Grid(-1, 1, 201, 0, 2, 201)
    assert symbolic_residual(sol.model, sol.ln_f_expr, grid).max <= 1e-12
    assert residual(sol.model, sol, grid).max <= 1e-8


def test_symmetry_residual_control():
    unit = ModelSpec(sigma=Const(1.0), drift=Const(0.0))
    grid = Grid(-1, 1, 101, 0, 1, 51)
    ok = SymmetryField(ZERO, Const(1.0), ZERO, "dx", "test")
    bad = SymmetryField(ZERO, X * X, ZERO, "x2dx", "test")
    assert symmetry_residual(unit, ok, grid).max == 0
    assert symmetry_residual(unit, bad, grid).max > 1e-3


def test_fd_heat_kernel():
    grid = Grid(-4, 4, 401, 0, 0.5, 401)
    sol = solve_fd(HEAT, exp(-X * X / 2), grid)
    ref = heat_kernel(sol.t[-1], sol.x)
    inner = slice(20, -20)
    assert np.max(np.abs(sol.F[-1, inner] / ref[inner] - 1)) <= 1e-4


@pytest.mark.parametrize("extrapolation", ["quadratic", "linear"])
def test_fd_schwartz(extrapolation):
    sol = solve_fd(constant_model(2.0, 0.3, 0.1, 0.2), exp(X), Grid(-1, 1, 201, 0, 1, 201), extrapolation=extrapolation)
    ref = np.exp(schwartz_solution(2.0, 0.1, 0.3, 0.2).ln_f(1.0, np.exp(sol.x)))
    assert np.max(np.abs(sol.F[-1] / ref - 1)) <= 1e-4


def test_fd_second_order_in_time_at_crank_nicolson():
    model = constant_model(2.0, 0.3, 0.1, 0.2)
    ref_sol = schwartz_solution(2.0, 0.1, 0.3, 0.2)
    errs = []
    for n_t in (26, 51, 101):
        sol = solve_fd(model, exp(X), Grid(-1, 1, 801, 0, 1, n_t))
        ref = np.exp(ref_sol.ln_f(1.0, np.exp(sol.x)))
        errs.append(np.max(np.abs(sol.F[-1] / ref - 1)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), (errs, orders)


def test_fd_implicit_euler_is_first_order():
    model = constant_model(2.0, 0.3, 0.1, 0.2)
    ref_sol = schwartz_solution(2.0, 0.1, 0.3, 0.2)
    errs = []
    for n_t in (51, 101):
        sol = solve_fd(model, exp(X), Grid(-1, 1, 401, 0, 1, n_t), theta=1.0)
        errs.append(np.max(np.abs(sol.F[-1] / np.exp(ref_sol.ln_f(1.0, np.exp(sol.x))) - 1)))
    assert 0.8 < math.log2(errs[0] / errs[1]) < 1.2


def test_fd_input_errors():
    with pytest.raises(ValueError):
        solve_fd(HEAT, exp(X), Grid(), theta=1.5)
    with pytest.raises(ValueError):
        solve_fd(HEAT, exp(X), Grid(), extrapolation="cubic")
    with pytest.raises(FDError):
        solve_fd(HEAT, X, Grid())


def test_grid_solution_validation_and_csv(tmp_path):
    with pytest.raises(FDError):
        GridSolution(np.linspace(0, 1, 3), np.linspace(0, 1, 2), -np.ones((2, 3)), HEAT)
    sol = solve_fd(HEAT, exp(X), Grid(-1, 1, 17, 0, 0.1, 3))
    lines = sol.to_csv().splitlines()
    assert lines[0] == "t,x,lnF" and len(lines) == 1 + 17 * 3
    assert grid_residual(sol, exclude=2).shape[0] == 1


@pytest.fixture
def unit_maximal():
    metric = Metric1D(Const(1.0))
    return corollary_model(Const(1.0), 1.0, 0.0), invariant_solution(metric, 1.0, 0.0), build_corollary_symmetries(metric, 1.0, 0.0)


def test_flow_along_symmetries_preserves_solutions(unit_maximal):
    model, sol, fields = unit_maximal
    grid = Grid(-1, 1, 81, 0.2, 1.0, 41)
    for fld in fields:
        rep = flow_transport_check(model, fld, sol, 0.1, grid)
        assert rep.max <= 1e-6, (fld.label, rep.max)
        assert rep.extra["passed"]


def test_flow_along_non_symmetry_breaks_solution(unit_maximal):
    model, sol, _ = unit_maximal
    bad = SymmetryField(ZERO, X * X, ZERO, "x2dx", "control")
    rep = flow_transport_check(model, bad, sol, 0.1, Grid(-1, 1, 81, 0.2, 1.0, 41))
    assert rep.max > 1e-3 and not rep.extra["passed"]


def test_flow_translation_is_exact():
    fld = SymmetryField(ZERO, Const(1.0), ZERO, "dx", "test")
    fn = transported(fld, lambda t, x: x**2 + t, 0.3)
    assert fn(0.5, 1.0) == pytest.approx(0.7**2 + 0.5, abs=1e-12)


def test_flow_bounds():
    fld = SymmetryField(ZERO, Const(1.0), ZERO, "dx", "test")
    fn = transported(fld, lambda t, x: x, 2.0, bounds=(-1, 1))
    with pytest.raises(FlowError):
        fn(np.zeros(3), np.zeros(3))
