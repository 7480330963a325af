"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (outside pytest's
capture) before asserting, so the summary is visible in ``pytest -v`` logs.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from onefactor.classify import SymmetryField, build_corollary_symmetries, classify, condition_residuals, heat_form_sigma
from onefactor.cli import main
from onefactor.expr import Const, X, ZERO, exp
from onefactor.geometry import Grid, Metric1D, ModelSpec, constant_model
from onefactor.pdesolve import flow_transport_check, residual, solve_fd
from onefactor.solutions import (
    DISCREPANCIES,
    DOCUMENTED,
    PASS,
    corollary_model,
    example_family,
    invariant_solution,
    schwartz_solution,
)
from onefactor.timedep import a_span_residual, model_from_strings, symmetry_basis

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
KAPPA, MU, LAM, SIGMA0 = 2.0, 0.3, 0.1, 0.2


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def test_criterion_1_schwartz(report):
    start = time.perf_counter()
    sol = schwartz_solution(KAPPA, LAM, MU, SIGMA0)
    res = residual(sol.model, sol, Grid(0.5, 2.0, 401, 0.0, 2.0, 401)).max
    ss = np.linspace(0.5, 2.0, 401)
    ic = float(np.max(np.abs(sol.F(0.0, ss) - ss) / ss))
    elapsed = time.perf_counter() - start
    ok = res <= 1e-8 and ic <= 4 * np.finfo(float).eps and elapsed < 5
    assert report(1, ok, f"residual={res:.3e} F(0,S)-S={ic:.1e} time={elapsed:.2f}s")


def test_criterion_2_maximal_recovery(report, tmp_path):
    start = time.perf_counter()
    code = main(["classify", "--config", str(CONFIGS / "constant.ini"), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    doc = json.loads((tmp_path / "constant_classify.json").read_text())
    labels = [f["label"] for f in doc["fields"]]
    worst = max(f["residual"]["max"] for f in doc["fields"])
    ok = (
        code == 0
        and doc["case"] == "Corollary/CaseA"
        and abs(doc["constants"]["m"] - KAPPA) <= 1e-8
        and labels == ["Z1", "Z2", "Z3", "Z4"]
        and all(f["status"] == "verified" for f in doc["fields"])
        and worst <= 1e-8
        and elapsed < 10
    )
    assert report(2, ok, f"case={doc['case']} m={doc['constants']['m']:.12g} field_residual={worst:.2e} time={elapsed:.2f}s")


def test_criterion_3_heat_form(report):
    kappa, mu, lam = 0.5, 1.0, 0.2
    grid = Grid(-1.0, 0.5, 401)
    sig = heat_form_sigma(kappa * (mu - lam - X), 1.5, grid)
    # sigma^2 = 2 kappa ((mu - lam) - x) + kappa + c1' e^{-2x}
    c1 = 1.5 - kappa * (2 * (mu - lam) + 1)
    xs = grid.x
    form = 2 * kappa * ((mu - lam) - xs) + kappa + c1 * np.exp(-2 * xs)
    shape_err = float(np.max(np.abs(sig.eval({"x": xs}) ** 2 - form)))
    rep = classify(ModelSpec(sigma=sig, kappa=Const(kappa), mu=Const(mu), lam=Const(lam)), grid)
    drift = rep.diagnostics["drift_residual"]
    ok = rep.case == "HeatForm" and drift <= 1e-8 and shape_err <= 1e-9
    assert report(3, ok, f"case={rep.case} drift_residual={drift:.2e} sigma^2_error={shape_err:.1e}")


def test_criterion_4_negative_control(report):
    model = ModelSpec(sigma=Const(1.0), drift=X**3)
    rep = classify(model)
    conds = condition_residuals(model, Grid())
    smallest = min(conds.values())
    ok = rep.case == "None" and rep.extra_count == 0 and smallest > 1e-3
    assert report(4, ok, f"case={rep.case} extra={rep.extra_count} min_condition_residual={smallest:.3f}")


def test_criterion_5_conclusion_solutions(report, tmp_path):
    start = time.perf_counter()
    worst_res, worst_gap = 0.0, 0.0
    m, c, x0 = 1.0, 0.5, 0.0
    for eps in (0.01, 0.1, 0.0):
        ex = example_family("exp_perturbation", {"eps": eps, "m": m, "c": c, "x0": x0})
        inv = invariant_solution(Metric1D(1 + eps * exp(X - x0)), m, c, x_ref=x0, u_offset=-np.log1p(eps))
        ts, xs = np.meshgrid(np.linspace(0, 2, 21), np.linspace(-1, 1, 41), indexing="ij")
        gap = float(np.max(np.abs(inv.ln_f(ts, xs) - ex.solution.ln_f(ts, xs))))
        res = max(residual(s.model, s, ex.grid).max for s in (ex.solution, inv))
        worst_res, worst_gap = max(worst_res, res), max(worst_gap, gap)
    files = []
    for out in (tmp_path / "a", tmp_path / "b"):
        assert main(["profiles", "--config", str(CONFIGS / "profiles.ini"), "--out", str(out)]) == 0
        files.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = files[0] == files[1] and {"exp_perturbation_eps0.1_t1.csv", "exp_perturbation_eps0.01_t1.csv"} <= set(files[0])
    elapsed = time.perf_counter() - start
    ok = worst_res <= 1e-8 and worst_gap <= 1e-9 and same and elapsed < 10
    assert report(5, ok, f"residual={worst_res:.2e} invariant_vs_stated={worst_gap:.1e} deterministic={same} time={elapsed:.2f}s")


def test_criterion_6_cross_oracle(report):
    model = constant_model(KAPPA, MU, LAM, SIGMA0)
    exact = schwartz_solution(KAPPA, LAM, MU, SIGMA0)
    errs = {}
    for n in (201, 401, 801):
        sol = solve_fd(model, exp(X), Grid(-1.0, 1.0, n, 0.0, 1.0, n))
        ref = np.exp(exact.ln_f(1.0, np.exp(sol.x)))
        errs[n] = float(np.max(np.abs(sol.F[-1] / ref - 1)))
    orders = [np.log2(errs[201] / errs[401]), np.log2(errs[401] / errs[801])]
    ok = errs[401] <= 1e-4 and min(orders) >= 1.9
    assert report(6, ok, f"rel_error@401={errs[401]:.2e} orders={orders[0]:.2f},{orders[1]:.2f}")


def test_criterion_7_flow_transport(report):
    metric = Metric1D(Const(1.0))
    model = corollary_model(Const(1.0), 1.0, 0.0)
    sol = invariant_solution(metric, 1.0, 0.0)
    grid = Grid(-1.0, 1.0, 201, 0.0, 2.0, 201)
    z1 = build_corollary_symmetries(metric, 1.0, 0.0)[0]
    good = flow_transport_check(model, z1, sol, 0.1, grid).max
    bad = flow_transport_check(model, SymmetryField(ZERO, X * X, ZERO, "x2dx", "control"), sol, 0.1, grid).max
    ok = good <= 1e-6 and bad > 1e-3
    assert report(7, ok, f"Z1={good:.2e} x^2 d_x={bad:.3f}")


def test_criterion_8_timedep(report):
    start = time.perf_counter()
    dims, worst, span = [], 0.0, 0.0
    for p, q in (("0", "0"), ("0.5", "1"), ("0", "1 + 0.1*t")):
        rep = symmetry_basis(model_from_strings(p, q), (0.0, 2.0))
        dims.append(rep.dimension)
        worst = max(worst, rep.residual_max)
        if "t" not in q:
            span = max(span, max(a_span_residual(el, float(q)) for el in rep.elements))
    elapsed = time.perf_counter() - start
    ok = dims == [6, 6, 6] and worst <= 1e-8 and span <= 1e-6 and elapsed < 5
    assert report(8, ok, f"dims={dims} residual={worst:.2e} a_span={span:.1e} time={elapsed:.2f}s")


def test_criterion_9_discrepancy_ledger(report):
    cases = {
        "power_sigma": example_family("power_sigma", {"m": 1.0, "c1": 0.5}),
        "exp_sigma": example_family("exp_sigma", {"m": 1.0, "c1": 0.5}),
        "sine": example_family("sine_perturbation", {"eps": 0.1, "m": 1.0, "c": 0.5}),
    }
    lines, ok = [], True
    for name, ex in cases.items():
        if ex.status == PASS:
            good = ex.residual <= 1e-8
        else:
            good = ex.status == DOCUMENTED and ex.discrepancy in DISCREPANCIES
        ok &= good
        lines.append(f"{name}={ex.status}" + (f"[{ex.discrepancy}]" if ex.discrepancy else ""))
    assert report(9, ok, " ".join(lines))
