"""Point-symmetry classification of the autonomous space-dependent model.

Every generator has the form

    X = tau(t) d_t + (T1(t) sigma + T2(t) sigma u) d_x + a(t, x) F d_F,
    tau' = 2 T2,   a = T1 V - T1' u + T2 u V - T2' u^2 / 2 + f(t),

with ``u = int dx / sigma`` and ``V = C^x / sigma``.  What remains is one
scalar relation between functions of ``x`` with coefficients built from
``T1, T2, f`` and their derivatives.  Conditions are decided on a grid;
symmetry fields are re-checked against the full prolongation conditions on a
(t, x) verification grid before being reported as verified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import ZERO, Const, Expr, LinearFlow, NumericFunction, T, X, as_expr, exp, sqrt, to_string
from .geometry import (
    DriftField,
    Grid,
    Metric1D,
    ModelError,
    ModelSpec,
    SpaceVectorField,
    drift_from_model,
    homothetic_basis,
    lie_derivative_cov,
    log_transform,
)
from .pdesolve import symmetry_residual

VERIFIED = "verified"
CANDIDATE = "candidate (unverified)"

CASES = ("HeatForm", "Corollary/CaseA", "B1", "B2a", "B2b", "None")


@dataclass
class SymmetryField:
    xi_t: Expr
    xi_x: Expr
    eta: Expr
    label: str
    provenance: str
    m: float | None = None
    c: float | None = None
    formula: str = ""
    status: str = CANDIDATE
    residual: dict = field(default_factory=dict)

    def verify(self, model: ModelSpec, grid: Grid, tol: float) -> "SymmetryField":
        rep = symmetry_residual(model, self, grid)
        self.residual = {"max": rep.max, **{k: v for k, v in rep.extra.items() if k.endswith("_max")}}
        self.status = VERIFIED if rep.max <= tol else CANDIDATE
        return self

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "provenance": self.provenance,
            "formula": self.formula,
            "xi_t": to_string(self.xi_t),
            "xi_x": to_string(self.xi_x),
            "eta": to_string(self.eta),
            "m": self.m,
            "c": self.c,
            "status": self.status,
            "residual": dict(self.residual),
        }


@dataclass
class ClassificationReport:
    case: str
    extra_count: int
    fields: list
    constants: dict
    diagnostics: dict
    subcase: str = ""
    notes: list = field(default_factory=list)

    @property
    def autonomous_count(self) -> int:
        # point symmetries apart from F d_F and the solution symmetries
        return self.extra_count + 1

    @property
    def total(self) -> str:
        return f"{self.extra_count}+1+1+∞"

    @property
    def compact_total(self) -> str:
        return f"{self.autonomous_count}+1+∞"

    @property
    def maximal(self) -> bool:
        return self.extra_count == 4

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "subcase": self.subcase,
            "counts": {
                "extra": self.extra_count,
                "with_autonomy": self.autonomous_count,
                "total": self.total,
                "compact_total": self.compact_total,
                "maximal": self.maximal,
            },
            "constants": dict(self.constants),
            "diagnostics": self.diagnostics,
            "fields": [f.to_dict() for f in self.fields],
            "notes": list(self.notes),
        }


# -- grid decisions -----------------------------------------------------------------


def detect_constant(samples, rel_tol: float = 1e-8):
    """Mean of the sampled values if they are constant to ``rel_tol``, else None.

    ``samples`` is an array of values or a sequence of ``(x, value)`` pairs.
    """
    arr = np.asarray(samples, dtype=float)
    vals = arr[:, 1] if arr.ndim == 2 else arr.ravel()
    if vals.size < 8:
        raise ValueError("need at least 8 samples to decide constancy")
    mean = float(np.mean(vals))
    if np.max(np.abs(vals - mean)) <= rel_tol * (1 + abs(mean)):
        return mean
    return None


def _nonconstancy(vals) -> float:
    mean = float(np.mean(vals))
    return float(np.max(np.abs(vals - mean)) / (1 + abs(mean)))


def _affine_misfit(vals, basis) -> tuple[float, float]:
    """Best ``k`` in ``vals ~ k basis + k0`` and the relative misfit."""
    design = np.column_stack([basis, np.ones_like(basis)])
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    misfit = np.max(np.abs(vals - design @ coef)) / (1 + np.max(np.abs(vals)))
    return float(coef[0]), float(misfit)


def _ev(e: Expr, xs) -> np.ndarray:
    return np.broadcast_to(np.asarray(e.eval({"x": xs}), dtype=float), np.shape(xs)).astype(float)


def case_a_test(Y: SpaceVectorField, C: DriftField, grid: Grid, tol: float = 1e-8, vanish: float = 1e-6):
    """Test ``L_Y C_x = m Y_x``; returns ``(m, SymmetryField)`` or None.

    Points where ``|Y_x|`` falls below ``vanish`` times its maximum are skipped.
    """
    xs = grid.x
    yx = _ev(Y.covariant, xs)
    lie = _ev(lie_derivative_cov(Y, C), xs)
    keep = np.abs(yx) > vanish * np.max(np.abs(yx))
    if keep.sum() < 8:
        raise ModelError(f"covariant component of {Y.name} vanishes on the grid")
    m = detect_constant(lie[keep] / yx[keep], tol)
    if m is None:
        return None
    growth = exp(m * T) if m != 0 else Const(1.0)
    if Y.psi == 0:
        fld = SymmetryField(ZERO, growth * Y.component, ZERO, f"A[{Y.name}]", "CaseA", m=m,
                            formula=f"e^(m t) {Y.name}")
    elif m != 0:
        fld = SymmetryField((2 * Y.psi / m) * growth, growth * Y.component, ZERO, f"A[{Y.name}]", "CaseA",
                            m=m, formula=f"(2 psi/m) e^(m t) d_t + e^(m t) {Y.name}")
    else:
        # the time factor is then affine in t and is handled by the general solve
        return None
    return m, fld


def corollary_fit(metric: Metric1D, C: DriftField, grid: Grid, tol: float = 1e-8, x_ref: float = 0.0, u_offset: float = 0.0):
    """Least-squares fit of ``C^x / sigma = m u + c``; ``(m, c)`` or None."""
    xs = grid.x
    v = _ev(C.C_contra / metric.sigma, xs)
    u = _ev(metric.u(x_ref, u_offset), xs)
    design = np.column_stack([u, np.ones_like(u)])
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    misfit = np.max(np.abs(v - design @ coef))
    if misfit <= tol * (1 + np.max(np.abs(v))):
        return float(coef[0]), float(coef[1])
    return None


def _corollary_misfit(metric, C, grid, x_ref, u_offset) -> float:
    xs = grid.x
    v = _ev(C.C_contra / metric.sigma, xs)
    u = _ev(metric.u(x_ref, u_offset), xs)
    return _affine_misfit(v, u)[1]


# -- corollary fields ---------------------------------------------------------------


def build_corollary_symmetries(metric: Metric1D, m: float, c: float, x_ref: float = 0.0, u_offset: float = 0.0) -> list:
    """The four non-trivial generators of a model with ``C^x = sigma (m u + c)``.

    With ``K1 = sigma d_x``, ``H = sigma u d_x`` and ``W = m u + c``:

    m != 0:
      Z1 = e^{mt} K1
      Z2 = e^{-mt} (K1 + 2 W F d_F)
      Z3 = e^{2mt} (d_t + m H + c K1)
      Z4 = e^{-2mt} (d_t - m H - c K1 - (2 W^2 - m) F d_F)
    m == 0:
      Z1 = K1
      Z2 = t K1 - (u - c t) F d_F
      Z3 = 2 t d_t + H + c t K1
      Z4 = t^2 d_t + t H - (u^2/2 - c t u + t/2 + c^2 t^2/2) F d_F
    """
    t = T
    sig = metric.sigma
    u = metric.u(x_ref, u_offset)
    prov = "Corollary" if (m, c) != (0.0, 0.0) else "HeatForm"
    if m != 0:
        w = m * u + c
        ep, em = exp(m * t), exp(-m * t)
        e2p, e2m = exp(2 * m * t), exp(-2 * m * t)
        fields = [
            SymmetryField(ZERO, ep * sig, ZERO, "Z1", prov, m, c, "e^(m t) K1"),
            SymmetryField(ZERO, em * sig, 2 * em * w, "Z2", prov, m, c, "e^(-m t) (K1 + 2 (m u + c) F d_F)"),
            SymmetryField(e2p, e2p * sig * w, ZERO, "Z3", prov, m, c, "e^(2 m t) (d_t + m H + c K1)"),
            SymmetryField(
                e2m,
                -(e2m * sig * w),
                -(e2m * (2 * w * w - m)),
                "Z4",
                prov,
                m,
                c,
                "e^(-2 m t) (d_t - m H - c K1 - (2 (m u + c)^2 - m) F d_F)",
            ),
        ]
    else:
        fields = [
            SymmetryField(ZERO, sig, ZERO, "Z1", prov, m, c, "K1"),
            SymmetryField(ZERO, t * sig, -(u - c * t), "Z2", prov, m, c, "t K1 - (u - c t) F d_F"),
            SymmetryField(2 * t, sig * u + c * t * sig, ZERO, "Z3", prov, m, c, "2 t d_t + H + c t K1"),
            SymmetryField(
                t * t,
                t * sig * u,
                -(u * u / 2 - c * t * u + t / 2 + c * c * t * t / 2),
                "Z4",
                prov,
                m,
                c,
                "t^2 d_t + t H - (u^2/2 - c t u + t/2 + c^2 t^2/2) F d_F",
            ),
        ]
    return fields


# -- heat form and initial data -----------------------------------------------------


def heat_form_sigma(K: Expr, c1: float, grid: Grid, x_ref: float = 0.0, tol: float = 1e-12) -> Expr:
    """``sigma = sqrt((4 int_{x_ref}^x e^{2s} K(s) ds + c1) e^{-2x})``, which makes ``C^x`` vanish."""
    K = as_expr(K)
    if isinstance(K, Const) and K.value == 0:
        sig2 = c1 * exp(-2 * X)
    else:
        inner = NumericFunction(4 * exp(2 * X) * K, "x", x_ref, tol).as_expr()
        sig2 = (inner + c1) * exp(-2 * X)
    vals = _ev(sig2, grid.x)
    if np.any(vals <= 0):
        bad = grid.x[vals <= 0][0]
        raise ModelError(f"sigma^2 is not positive on the grid (x={bad:.6g})")
    return sqrt(sig2)


def constant_heat_sigma(kappa: float, mu: float, lam: float, c1: float) -> Expr:
    """Closed form of the heat-form volatility for constant market parameters."""
    return sqrt(2 * kappa * ((mu - lam) - X) + kappa + c1 * exp(-2 * X))


def initial_condition_from_symmetry(metric: Metric1D, x_ref: float = 0.0, tol: float = 1e-12) -> Expr:
    """Initial profile ``g`` with ``sigma g' = g``, i.e. ``g = exp(int dx / sigma)``."""
    return exp(metric.u(x_ref, 0.0, tol))


# -- general determining system -------------------------------------------------------


@dataclass
class DeterminingSolution:
    dimension: int
    generator: np.ndarray  # dynamics of the reduced time coordinates
    eigenvalues: np.ndarray
    fields: list
    null_dim: int
    singular_values: np.ndarray
    label: str


def _relation_columns(sigma: Expr, C: DriftField, u: Expr):
    """x-functions multiplying (T1, -T1', T1'', T2, -T2', T2'', -2 f') in the residual relation."""
    A = sigma * sigma / 2
    B = C.b_eff
    v = C.C_contra / sigma
    P = (2 * v, 2 * u * v)
    Q = (2 * u, u * u)
    Yx = (2 / sigma, 2 * u / sigma)
    cols = []
    for i in range(2):
        L = P[i].diff("x")
        cols += [A * L.diff("x") + B * L, A * Yx[i].diff("x") + B * Yx[i] + P[i], Q[i]]
    return cols, v


def _null_space(mat: np.ndarray, tol: float):
    norms = np.linalg.norm(mat, axis=0)
    # cancellation leaves round-off in columns that vanish identically
    dead = norms <= 1e-11 * norms.max()
    mat = np.where(dead, 0.0, mat)
    norms[dead] = 1.0
    _, s, vt = np.linalg.svd(mat / norms, full_matrices=True)
    s_full = np.zeros(mat.shape[1])
    s_full[: s.size] = s
    ref = max(s_full[0], 1e-300)
    null = vt[s_full <= tol * ref].T
    return null / norms[:, None], s_full


def _orth(mat: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    if mat.size == 0:
        return mat.reshape(mat.shape[0], 0)
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((mat.shape[0], 0))
    return u[:, s > tol * s[0]]


def _kernel(mat: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    if mat.shape[0] == 0:
        return np.eye(mat.shape[1])
    _, s, vt = np.linalg.svd(mat, full_matrices=True)
    s_full = np.zeros(mat.shape[1])
    s_full[: s.size] = s
    # operands are built from orthonormal bases, so the scale is at least 1
    ref = max(s_full[0], 1.0)
    return vt[s_full <= tol * ref].T


def solve_determining_system(model: ModelSpec, grid: Grid, x_ref: float = 0.0, u_offset: float = 0.0, rank_tol: float = 1e-7) -> DeterminingSolution:
    """All time factors compatible with the residual relation, by grid linear algebra.

    The sampled x-functions give the admissible coefficient vectors; the
    largest subspace of ``(T1, T1', T2, T2', T1'', T2'')`` that is closed
    under differentiation then yields a constant-coefficient linear ODE for
    the time factors.  Its dimension is the number of extra symmetries.
    """
    if model.coords != "x":
        model = log_transform(model)
    metric = Metric1D(model.sigma)
    metric.validate(grid.x)
    C = drift_from_model(model, grid.x)
    u = metric.u(x_ref, u_offset)
    cols, v = _relation_columns(model.sigma, C, u)
    phi = np.column_stack([_ev(e, grid.x) for e in cols] + [np.ones(grid.n_x)])
    null, svals = _null_space(phi, rank_tol)
    n6 = null[:6]
    rng = _orth(n6)
    # constraint rows on v' = (T1, -T1', T1'', T2, -T2', T2'')
    comp = _kernel(rng.T).T if rng.shape[1] else np.eye(6)
    sign = np.diag([1.0, -1.0, 1.0, 1.0, -1.0, 1.0])
    # reorder to p = (T1, T1', T2, T2', T1'', T2'')
    perm = np.zeros((6, 6))
    for new, old in enumerate((0, 1, 3, 4, 2, 5)):
        perm[old, new] = 1.0
    E = comp @ sign @ perm
    # derivative of the state part (T1, T1', T2, T2') as a function of p
    dyn = np.zeros((4, 6))
    dyn[0, 1] = dyn[1, 4] = dyn[2, 3] = dyn[3, 5] = 1.0
    V = _kernel(E)
    while V.shape[1]:
        Z = _orth(V[:4])
        proj = np.eye(4) - Z @ Z.T
        keep = _kernel(proj @ dyn @ V)
        if keep.shape[1] == V.shape[1]:
            break
        V = _orth(V @ keep)
    d = V.shape[1]
    if d and np.linalg.matrix_rank(V[:4], tol=1e-9) < d:
        raise ModelError("determining relation leaves a free time function; the model is degenerate")
    if d == 0:
        return DeterminingSolution(0, np.zeros((0, 0)), np.zeros(0), [], null.shape[1], svals, "None")
    Z0 = V[:4]
    pinv = np.linalg.pinv(Z0)
    G = pinv @ dyn @ V
    # f' from the constant column of the null space
    vprime = sign @ perm @ V
    wts, *_ = np.linalg.lstsq(n6, vprime, rcond=None)
    fprime = -0.5 * (null[6] @ wts)
    size = d + 2
    gen = np.zeros((size, size))
    gen[:d, :d] = G
    gen[d, :d] = fprime
    gen[d + 1, :d] = 2 * Z0[2]
    eig = np.linalg.eigvals(G)
    scale = max(1.0, float(np.max(np.abs(eig))))
    zero = np.abs(eig) <= 1e-6 * scale
    label = "B2a" if zero.all() else ("B1" if zero.any() else "B2b")
    sig = model.sigma
    fields = []
    for j in range(d):
        init = np.zeros(size)
        init[j] = 1.0
        pad = lambda r: np.concatenate([r, [0.0, 0.0]])  # noqa: E731
        T1 = LinearFlow(pad(Z0[0]), gen, init, label="T1")
        T2 = LinearFlow(pad(Z0[2]), gen, init, label="T2")
        tau = LinearFlow(np.eye(size)[d + 1], gen, init, label="tau")
        f = LinearFlow(np.eye(size)[d], gen, init, label="f")
        xi = T1 * sig + T2 * sig * u
        a = T1 * v - T1.diff("t") * u + T2 * u * v - T2.diff("t") * u * u / 2 + f
        fields.append(
            SymmetryField(tau, xi, a, f"G{j + 1}", label, formula="tau d_t + (T1 K1 + T2 H) + a F d_F")
        )
    return DeterminingSolution(d, G, eig, fields, null.shape[1], svals, label)


# -- condition diagnostics ------------------------------------------------------------


def condition_residuals(model: ModelSpec, grid: Grid, x_ref: float = 0.0, u_offset: float = 0.0) -> dict:
    """Relative misfit of every case condition (0 means the condition holds)."""
    metric = Metric1D(model.sigma)
    C = drift_from_model(model, grid.x)
    u = metric.u(x_ref, u_offset)
    xs = grid.x
    out = {"corollary": _corollary_misfit(metric, C, grid, x_ref, u_offset)}
    k1, h = homothetic_basis(metric, x_ref, u_offset)
    for Y in (k1, h):
        yx = _ev(Y.covariant, xs)
        lie = _ev(lie_derivative_cov(Y, C), xs)
        keep = np.abs(yx) > 1e-6 * np.max(np.abs(yx))
        out[f"A[{Y.name}]"] = _nonconstancy(lie[keep] / yx[keep])
    cols, _ = _relation_columns(model.sigma, C, u)
    for i, name in enumerate(("K1", "H")):
        alpha, beta, gamma = (_ev(e, xs) for e in cols[3 * i : 3 * i + 3])
        da, db = _nonconstancy(alpha), _nonconstancy(beta)
        out[f"B1[{name}]"] = max(da, _affine_misfit(beta, gamma)[1])
        out[f"B2a[{name}]"] = max(da, db)
        out[f"B2b[{name}]"] = max(db, _affine_misfit(alpha, gamma)[1])
    return out


# -- driver ---------------------------------------------------------------------------


def _drift_is_zero(model: ModelSpec, C: DriftField, grid: Grid, tol: float) -> tuple[bool, float]:
    xs = grid.x
    cx = _ev(C.C_contra, xs)
    sig = model.sigma
    scale = 1 + np.max(np.abs(_ev(sig * sig / 2, xs))) + np.max(np.abs(_ev(sig * sig.diff("x") / 2, xs)))
    resid = float(np.max(np.abs(cx)) / scale)
    return resid <= tol, resid


def verification_grid(grid: Grid, n: int = 201, t_max: float = 2.0) -> Grid:
    return Grid(grid.x_min, grid.x_max, n, 0.0, t_max, n)


def classify(
    model: ModelSpec,
    grid: Grid | None = None,
    tol: float = 1e-8,
    verify_tol: float = 1e-8,
    x_ref: float = 0.0,
    u_offset: float = 0.0,
    vgrid: Grid | None = None,
) -> ClassificationReport:
    grid = grid or Grid()
    if model.coords != "x":
        model = log_transform(model)
    metric = Metric1D(model.sigma)
    metric.validate(grid.x)
    C = drift_from_model(model, grid.x)
    vgrid = vgrid or verification_grid(grid)
    diagnostics = {"conditions": condition_residuals(model, grid, x_ref, u_offset)}
    notes = ["Conditions are decided on a sampled grid, not proved for every x."]

    zero, resid = _drift_is_zero(model, C, grid, tol)
    diagnostics["drift_residual"] = resid
    general = None
    try:
        general = solve_determining_system(model, grid, x_ref, u_offset)
        diagnostics["general_count"] = general.dimension
        diagnostics["general_label"] = general.label
    except ModelError as exc:
        diagnostics["general_error"] = str(exc)

    def finish(case, count, fields, constants, subcase=""):
        for f in fields:
            f.verify(model, vgrid, verify_tol)
        if any(f.status != VERIFIED for f in fields):
            notes.append("Some fields failed verification and are reported as candidates.")
        return ClassificationReport(case, count, fields, constants, diagnostics, subcase, notes)

    if zero:
        fields = build_corollary_symmetries(metric, 0.0, 0.0, x_ref, u_offset)
        return finish("HeatForm", 4, fields, {"m": 0.0, "c": 0.0})

    fit = corollary_fit(metric, C, grid, tol, x_ref, u_offset)
    if fit is not None:
        m, c = fit
        fields = build_corollary_symmetries(metric, m, c, x_ref, u_offset)
        return finish("Corollary/CaseA", 4, fields, {"m": m, "c": c}, "Corollary")

    k1, h = homothetic_basis(metric, x_ref, u_offset)
    for Y in (k1, h):
        try:
            hit = case_a_test(Y, C, grid, tol)
        except ModelError:
            continue
        if hit is not None:
            m, fld = hit
            count = general.dimension if general is not None and general.dimension else 1
            return finish("Corollary/CaseA", count, [fld], {"m": m}, f"A[{Y.name}]")

    if general is not None and general.dimension:
        eig = general.eigenvalues
        const = {"eigenvalues_re": [float(e) for e in np.real(eig)], "eigenvalues_im": [float(e) for e in np.imag(eig)]}
        return finish(general.label, general.dimension, general.fields, const)
    return finish("None", 0, [], {})


def classification_dict(report: ClassificationReport) -> dict:
    return report.to_dict()
