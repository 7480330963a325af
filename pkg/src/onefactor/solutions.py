"""Closed-form and invariant solutions, including the stated forms of the worked examples.

The canonical output is the solution invariant under
``e^{mt} K1 + s F d_F`` for a model with ``C^x = sigma (m u + c)``:

    m != 0:  ln F = s e^{-mt} u + (c s / m) e^{-mt} - s^2 e^{-2mt} / (4m)
    m == 0:  ln F = s u + (s^2/2 - c s) t

Stated per-example forms are kept as literals and checked against the
residual oracle; mismatches are reported with a key into ``DISCREPANCIES``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, S, T, X, arctan, as_expr, exp, ln, sin, sqrt, tan, to_string
from .geometry import Grid, Metric1D, ModelSpec, constant_model
from .pdesolve import ResidualError, residual

RESIDUAL_TOL = 1e-8
PASS = "residual <= 1e-8"
DOCUMENTED = "documented discrepancy"

# Known mismatches between stated example formulas and the equations they
# are meant to solve; statuses refer to these keys.
DISCREPANCIES = {
    "power-sigma-drift": (
        "sigma = x: the stated drift -m ln x + c1 x does not satisfy the maximal-symmetry "
        "condition; integrating x C' - C - m x = 0 gives m x ln x + c1 x."
    ),
    "power-sigma-solution": (
        "sigma = x: the stated solutions carry the opposite sign on the c1 term "
        "relative to the invariant solution of the maximal model."
    ),
    "exp-sigma-drift": (
        "sigma = e^x: the stated drift -m + c1 e^{-x} is maximal only for c1 = 0; "
        "the maximal family is -m + c1 e^{x}, for which the stated solution holds."
    ),
    "sine-complex": (
        "sigma = 1 + eps sin(w x): the stated solution is complex-valued (explicit "
        "imaginary unit, sqrt(1 + eps^2) prefactor, no w); the real solution is built "
        "from u = int dx / sigma instead."
    ),
}


@dataclass(frozen=True)
class ClosedFormSolution:
    ln_f_expr: Expr
    model: ModelSpec
    params: dict = field(default_factory=dict, compare=False)
    provenance: str = ""

    @property
    def var(self) -> str:
        return self.model.var

    def ln_f(self, t, v):
        return self.ln_f_expr.eval({"t": t, self.var: v})

    def F(self, t, v):
        return np.exp(self.ln_f(t, v))

    def __str__(self):
        return to_string(self.ln_f_expr)


def schwartz_solution(kappa: float, lam: float, mu: float, sigma0: float) -> ClosedFormSolution:
    """Closed-form price of the constant-coefficient model with ``F(0, S) = S``."""
    if kappa <= 0:
        raise ValueError("mean reversion kappa must be positive")
    a_star = mu - lam - 0.5 * sigma0**2 / kappa
    decay = exp(-kappa * T)
    lnf = decay * ln(S) + (1 - decay) * a_star + (sigma0**2 / (4 * kappa)) * (1 - exp(-2 * kappa * T))
    params = {"kappa": kappa, "lambda": lam, "mu": mu, "sigma0": sigma0, "a_star": a_star}
    return ClosedFormSolution(lnf, constant_model(kappa, mu, lam, sigma0, coords="S"), params, "schwartz")


def corollary_model(sigma: Expr, m: float, c: float, x_ref: float = 0.0, u_offset: float = 0.0, u: Expr | None = None) -> ModelSpec:
    """Model with ``C^x = sigma (m u + c)``; ``u`` may be passed in closed form."""
    metric = Metric1D(as_expr(sigma))
    u = metric.u(x_ref, u_offset) if u is None else u
    return ModelSpec(sigma=metric.sigma, drift=metric.sigma * (m * u + c), name="corollary",
                     params={"m": m, "c": c, "x_ref": x_ref, "u_offset": u_offset})


def invariant_solution(
    metric: Metric1D,
    m: float,
    c: float,
    x_ref: float = 0.0,
    u_offset: float = 0.0,
    scale: float = 1.0,
    u: Expr | None = None,
) -> ClosedFormSolution:
    """Solution invariant under ``e^{mt} K1 + scale F d_F``."""
    u = metric.u(x_ref, u_offset) if u is None else u
    s = scale
    if m != 0:
        lnf = s * exp(-m * T) * u + (c * s / m) * exp(-m * T) - (s * s / (4 * m)) * exp(-2 * m * T)
    else:
        lnf = s * u + (s * s / 2 - c * s) * T
    model = corollary_model(metric.sigma, m, c, x_ref, u_offset, u)
    params = {"m": m, "c": c, "x_ref": x_ref, "u_offset": u_offset, "scale": s}
    return ClosedFormSolution(lnf, model, params, "invariant")


def schwartz_embedding(kappa: float, lam: float, mu: float, sigma0: float) -> ClosedFormSolution:
    """Invariant solution of the constant model written in ``x = ln S``."""
    m = kappa
    c = (0.5 * sigma0**2 - kappa * (mu - lam)) / sigma0
    return invariant_solution(Metric1D(as_expr(sigma0)), m, c, scale=sigma0)


# -- worked examples ----------------------------------------------------------------


@dataclass
class FamilyExample:
    kind: str
    model: ModelSpec  # model as stated for the example
    solution: ClosedFormSolution  # stated form if there is one, else canonical
    canonical: ClosedFormSolution  # invariant solution of the maximal model
    grid: Grid
    stated: bool
    status: str = ""
    residual: float = float("nan")
    discrepancy: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "stated": self.stated,
            "status": self.status,
            "residual": self.residual,
            "discrepancy": self.discrepancy,
            "solution": str(self.solution),
            "notes": list(self.notes),
        }


def _check(sol: ClosedFormSolution, grid: Grid) -> float:
    try:
        return residual(sol.model, sol, grid).max
    except ResidualError:
        return float("inf")


def _verdict(ex: FamilyExample, key: str) -> FamilyExample:
    ex.residual = _check(ex.solution, ex.grid)
    if ex.residual <= RESIDUAL_TOL:
        ex.status = PASS
    else:
        ex.status = DOCUMENTED
        ex.discrepancy = key
    return ex


def _vgrid(x_min, x_max, n=401):
    return Grid(x_min, x_max, n, 0.0, 2.0, n)


def _power_sigma(p):
    m, c1 = p.get("m", 1.0), p.get("c1", 0.5)
    form = p.get("drift_form", "stated")
    grid = _vgrid(p.get("x_min", 0.5), p.get("x_max", 2.0))
    sig = X
    u = ln(X)
    drift = -m * ln(X) + c1 * X if form == "stated" else m * X * ln(X) + c1 * X
    model = ModelSpec(sigma=sig, drift=drift, name=f"power_sigma[{form}]", params=dict(p))
    canonical = invariant_solution(Metric1D(sig), m, c1, x_ref=1.0, u=u)
    if m != 0:
        lnf = exp(-m * T) * ln(X) - exp(-2 * m * T) / (4 * m) - (c1 / m) * exp(-m * T)
    else:
        lnf = ln(X) + (c1 + 0.5) * T
    sol = ClosedFormSolution(lnf, model, dict(p), "power_sigma stated")
    ex = FamilyExample("power_sigma", model, sol, canonical, grid, True)
    key = "power-sigma-solution" if form != "stated" else "power-sigma-drift"
    return _verdict(ex, key)


def _exp_sigma(p):
    m, c1 = p.get("m", 1.0), p.get("c1", 0.5)
    form = p.get("drift_form", "stated")
    grid = _vgrid(p.get("x_min", -1.0), p.get("x_max", 1.0))
    sig = exp(X)
    u = -exp(-X)
    drift = -m + c1 * exp(-X) if form == "stated" else -m + c1 * exp(X)
    model = ModelSpec(sigma=sig, drift=drift, name=f"exp_sigma[{form}]", params=dict(p))
    canonical = invariant_solution(Metric1D(sig), m, c1, x_ref=0.0, u_offset=-1.0, u=u)
    if m != 0:
        lnf = -(exp(-m * T) / (4 * m)) * (4 * m * exp(-X) - 4 * c1 + exp(-m * T))
        sol = ClosedFormSolution(lnf, model, dict(p), "exp_sigma stated")
        stated = True
    else:
        sol = ClosedFormSolution(canonical.ln_f_expr, model, dict(p), "exp_sigma canonical")
        stated = False
    ex = FamilyExample("exp_sigma", model, sol, canonical, grid, stated)
    return _verdict(ex, "exp-sigma-drift")


def _exp_perturbation(p):
    m, c = p.get("m", 1.0), p.get("c", 0.5)
    eps, x0 = p.get("eps", 0.1), p.get("x0", 0.0)
    grid = _vgrid(p.get("x_min", -1.0), p.get("x_max", 1.0))
    sig = 1 + eps * exp(X - x0)
    u = (X - x0) - ln(1 + eps * exp(X - x0))
    model = corollary_model(sig, m, c, x_ref=x0, u_offset=-math.log1p(eps), u=u)
    canonical = invariant_solution(Metric1D(sig), m, c, x_ref=x0, u_offset=-math.log1p(eps))
    if m != 0:
        lnf = (
            -exp(-m * T) * ln(1 + eps * exp(X - x0))
            + exp(-m * T) * (X - x0)
            + (c / m) * exp(-m * T)
            - exp(-2 * m * T) / (4 * m)
        )
        sol = ClosedFormSolution(lnf, model, dict(p), "exp_perturbation stated")
        stated = True
    else:
        sol = ClosedFormSolution(canonical.ln_f_expr, model, dict(p), "exp_perturbation canonical")
        stated = False
    ex = FamilyExample("exp_perturbation", model, sol, canonical, grid, stated)
    return _verdict(ex, "")


def sine_u_closed_form(eps: float, omega: float) -> Expr:
    """Real antiderivative of ``1/(1 + eps sin(omega x))`` for ``|eps| < 1``, zero at x = 0.

    Valid on the branch ``|omega x| < pi``.
    """
    if not abs(eps) < 1:
        raise ValueError("closed form needs |eps| < 1")
    r = math.sqrt(1 - eps * eps)
    pref = 2 / (omega * r)
    return pref * arctan((tan(omega * X / 2) + eps) / r) - pref * math.atan(eps / r)


def sine_stated_value(t, x, eps: float, m: float, c: float) -> np.ndarray:
    """The stated (complex-valued) sine-family solution, evaluated literally."""
    t = np.asarray(t, dtype=complex)
    x = np.asarray(x, dtype=complex)
    arg = (np.tan(x / 2) + eps) / np.sqrt(1 - eps * eps + 0j)
    return (
        2 * np.exp(-m * t) / np.sqrt(1 + eps * eps) * 1j * np.arctan(arg)
        + (c / m) * np.exp(-m * t)
        - np.exp(-2 * m * t) / (4 * m)
    )


def _sine_perturbation(p):
    m, c = p.get("m", 1.0), p.get("c", 0.5)
    eps, omega = p.get("eps", 0.1), p.get("omega", 1.0)
    grid = _vgrid(p.get("x_min", -1.0), p.get("x_max", 1.0))
    sig = 1 + eps * sin(omega * X)
    metric = Metric1D(sig)
    model = corollary_model(sig, m, c)
    canonical = invariant_solution(metric, m, c)
    ex = FamilyExample("sine_perturbation", model, canonical, canonical, grid, False)
    ex.residual = _check(canonical, grid)
    if m != 0 and eps != 0:
        pts = sine_stated_value(np.array([0.0, 0.5]), np.array([0.3, -0.4]), eps, m, c)
        imag = float(np.max(np.abs(pts.imag)))
        ex.notes.append(f"stated form has imaginary part up to {imag:.3g} at sample points")
        ex.status = DOCUMENTED
        ex.discrepancy = "sine-complex"
    else:
        ex.status = PASS if ex.residual <= RESIDUAL_TOL else DOCUMENTED
    return ex


def _heat_constant(p):
    kappa, mu, lam = p.get("kappa", 0.5), p.get("mu", 1.0), p.get("lambda", 0.2)
    grid = _vgrid(p.get("x_min", -1.0), p.get("x_max", 0.5))
    sig = sqrt(2 * kappa * ((mu - lam) - X) + kappa)
    model = ModelSpec(sigma=sig, kappa=as_expr(kappa), mu=as_expr(mu), lam=as_expr(lam), name="heat_constant")
    lnf = (mu / 2) * (mu * kappa * T - 2 * sqrt(2 * (mu - lam - X) + 1))
    sol = ClosedFormSolution(lnf, model, dict(p), "heat_constant stated")
    # invariant solution of the heat form (m = c = 0) for comparison
    canonical = invariant_solution(Metric1D(sig), 0.0, 0.0, u=None)
    ex = FamilyExample("heat_constant", model, sol, canonical, grid, True)
    return _verdict(ex, "")


_FAMILIES = {
    "power_sigma": _power_sigma,
    "exp_sigma": _exp_sigma,
    "exp_perturbation": _exp_perturbation,
    "sine_perturbation": _sine_perturbation,
    "heat_constant": _heat_constant,
}


def example_family(kind: str, params: dict | None = None) -> FamilyExample:
    try:
        build = _FAMILIES[kind]
    except KeyError:
        raise ValueError(f"unknown example family {kind!r}; choose from {sorted(_FAMILIES)}") from None
    return build(dict(params or {}))


# -- static profiles ----------------------------------------------------------------


def static_profile(sol: ClosedFormSolution, t0: float, xs) -> np.ndarray:
    """Rows ``(x, lnF(t0, x))``."""
    xs = np.asarray(xs, dtype=float)
    vals = np.broadcast_to(np.asarray(sol.ln_f(np.full_like(xs, t0), xs), dtype=float), xs.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("profile is not finite on the requested grid")
    return np.column_stack([xs, vals])


def profile_csv(rows: np.ndarray, header: dict) -> str:
    buf = io.StringIO()
    meta = " ".join(f"{k}={v}" for k, v in header.items())
    buf.write(f"# {meta}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "lnF"])
    for x, y in rows:
        writer.writerow([f"{x:.17g}", f"{y:.17g}"])
    return buf.getvalue()
