"""Point symmetries of the time-dependent one-factor model.

With unit volatility the model reads

    F_t = F_xx / 2 + (p(t) - q(t) x - 1/2) F_x

and every point symmetry has the form

    X = a(t) d_t + (a'(t) x / 2 + b(t)) d_x + (f + k0 x + k1 x^2 / 2) F d_F,
    k1 = q a' + a q' - a'' / 2,
    k0 = a'/4 - p a'/2 - b' - a p' + q b.

The coefficients obey a cascaded linear ODE system (third order in ``a``,
second order in ``b``, first order in ``f``); its solution space is six
dimensional for every smooth ``(p, q)``.  A time-dependent volatility is
removed first by the clock change ``ds = sigma(t)^2 dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import ONE, Expr, NumericFunction, to_string
from .ode import Trajectory, integrate

STATE = ("a", "a1", "a2", "b", "b1", "f")

# 6th-order central first-derivative weights for offsets -3..3
_FD6 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_FD_H = 0.01


class TimeDepError(ValueError):
    pass


@dataclass(frozen=True)
class TimeDepModel:
    p: Expr
    q: Expr
    sigma: Expr = ONE

    def __post_init__(self):
        for name in ("p", "q", "sigma"):
            e = getattr(self, name)
            if e.free_symbols() - {"t"}:
                raise TimeDepError(f"{name} may depend on t only")

    @property
    def unit_sigma(self) -> bool:
        return self.sigma.free_symbols() == frozenset() and float(self.sigma.eval({})) == 1.0

    def normalized(self):
        """``(p~, q~)`` and their first and second clock derivatives, as t-expressions."""
        s2 = self.sigma * self.sigma
        if self.unit_sigma:
            d = lambda e: e.diff("t")  # noqa: E731
            p0, q0 = self.p, self.q
        else:
            d = lambda e: e.diff("t") / s2  # noqa: E731
            p0, q0 = self.p / s2, self.q / s2
        p1, q1 = d(p0), d(q0)
        return (p0, p1, d(p1)), (q0, q1, d(q1))

    def clock(self, t0: float = 0.0) -> NumericFunction | None:
        """``s(t) = int_{t0}^t sigma^2``; None when sigma = 1."""
        if self.unit_sigma:
            return None
        return NumericFunction(self.sigma * self.sigma, "t", t0, 1e-13)


def _coeffs(model: TimeDepModel, t):
    (p, dp, ddp), (q, dq, ddq) = model.normalized()
    env = {"t": t}
    ev = lambda e: np.broadcast_to(np.asarray(e.eval(env), dtype=float), np.shape(t))  # noqa: E731
    vals = [ev(e) for e in (p, dp, ddp, q, dq, ddq)]
    if not all(np.all(np.isfinite(v)) for v in vals):
        raise TimeDepError("p or q is not finite on the integration span")
    return vals


def third_order(a, a1, a2, q, dq, ddq):
    """``a'''`` from ``a'''/2 = 2 q^2 a' + 2 a q q' + 2 a' q' + a q''``."""
    return 4 * q * q * a1 + 4 * a * q * dq + 4 * a1 * dq + 2 * a * ddq


def b_second(a, a1, b, b1, p, dp, ddp, q, dq):
    return (
        b * q * q
        + 0.75 * q * a1
        - 1.5 * p * q * a1
        - a * q * dp
        - 1.5 * a1 * dp
        + 0.5 * a * dq
        + b * dq
        - a * p * dq
        - a * ddp
    )


def f_first(a, a1, a2, b, b1, p, dp, q, dq):
    return 0.5 * (
        -b * q
        + 2 * b * p * q
        - a1 / 4
        + (p * a1 - p * p * a1)
        + q * a1
        + b1
        - 2 * p * b1
        + a * dp
        - 2 * a * p * dp
        + a * dq
        - a2 / 2
    )


def determining_residuals(model: TimeDepModel, state, t, derivs):
    """Left-hand sides of the three determining equations.

    ``state`` is ``(a, a', a'', b, b', f)`` and ``derivs`` supplies
    ``(a''', b'', f')`` (from finite differences when verifying).
    """
    a, a1, a2, b, b1, f = (np.asarray(v, dtype=float) for v in state)
    a3, b2, f1 = (np.asarray(v, dtype=float) for v in derivs)
    p, dp, ddp, q, dq, ddq = _coeffs(model, t)
    r1 = (
        -b * q + 2 * b * p * q - a1 / 4 + (p * a1 - p * p * a1) + q * a1 + b1 - 2 * p * b1 - 2 * f1
        + a * dp - 2 * a * p * dp + a * dq - a2 / 2
    )
    r2 = (
        -2 * b * q * q - 1.5 * q * a1 + 3 * p * q * a1 + 2 * a * q * dp + 3 * a1 * dp - a * dq
        - 2 * b * dq + 2 * a * p * dq + 2 * b2 + 2 * a * ddp
    )
    r3 = -2 * q * q * a1 - 2 * a * q * dq - 2 * a1 * dq - a * ddq + a3 / 2
    return r1, r2, r3


def _rhs(model: TimeDepModel, clock: bool):
    s2 = None if not clock else model.sigma * model.sigma

    def fun(s, y):
        a, a1, a2, b, b1, f = y[:6]
        t = y[6] if clock else s
        p, dp, ddp, q, dq, ddq = (float(v) for v in _coeffs(model, t))
        out = [
            a1,
            a2,
            third_order(a, a1, a2, q, dq, ddq),
            b1,
            b_second(a, a1, b, b1, p, dp, ddp, q, dq),
            f_first(a, a1, a2, b, b1, p, dp, q, dq),
        ]
        if clock:
            out.append(1.0 / float(s2.eval({"t": t})))
        return np.array(out)

    return fun


@dataclass
class TimeDepSymmetry:
    """One solution of the determining system, stored on the normalized clock ``s``."""

    model: TimeDepModel
    init: np.ndarray
    legs: list  # Trajectory pieces covering the span
    span: tuple
    residual: dict = field(default_factory=dict)

    def state(self, s) -> np.ndarray:
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty((s_arr.size, self.legs[0].ys.shape[1]))
        for leg in self.legs:
            lo, hi = sorted((leg.ts[0], leg.ts[-1]))
            sel = (s_arr >= lo) & (s_arr <= hi)
            if sel.any():
                out[sel] = leg(s_arr[sel])
        return out if np.ndim(s) else out[0]

    def coefficients(self, s) -> dict:
        st = np.atleast_2d(self.state(s))
        return {name: st[:, i] for i, name in enumerate(STATE)}

    def vector_field(self, s, x):
        """``(tau, xi, eta)`` on the product of clock values ``s`` and positions ``x``.

        Arrays have shape ``(len(s), len(x))``.
        """
        st = np.atleast_2d(self.state(s))
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        t = st[:, 6] if st.shape[1] > 6 else s_arr
        a, a1, a2, b, b1, f = (v[:, None] for v in st[:, :6].T)
        p, dp, _, q, dq, _ = (v[:, None] for v in _coeffs(self.model, t))
        k1 = q * a1 + a * dq - a2 / 2
        k0 = a1 / 4 - p * a1 / 2 - b1 - a * dp + q * b
        x = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
        shape = (s_arr.size, x.shape[1])
        return np.broadcast_to(a, shape), a1 * x / 2 + b, f + k0 * x + k1 * x * x / 2


@dataclass
class BasisReport:
    elements: list
    dimension: int
    init_matrix: np.ndarray
    residual_max: float
    reparameterization: str
    note: str

    def to_dict(self, samples: int = 21) -> dict:
        out = []
        for el in self.elements:
            lo, hi = el.span
            ss = np.linspace(lo, hi, samples)
            co = el.coefficients(ss)
            out.append(
                {
                    "init": [float(v) for v in el.init],
                    "s": [float(v) for v in ss],
                    "a": [float(v) for v in co["a"]],
                    "b": [float(v) for v in co["b"]],
                    "f": [float(v) for v in co["f"]],
                    "residual": dict(el.residual),
                }
            )
        return {
            "dimension": self.dimension,
            "init_matrix_is_identity": bool(np.array_equal(self.init_matrix, np.eye(6))),
            "residual_max": self.residual_max,
            "reparameterization": self.reparameterization,
            "note": self.note,
            "elements": out,
        }


def _span_in_clock(model: TimeDepModel, t_span):
    t0, t1 = map(float, t_span)
    clk = model.clock(t0)
    if clk is None:
        return t0, t1, t0
    return 0.0, float(clk(t1)), t0


def solve_determining(model: TimeDepModel, t_span=(0.0, 2.0), init=(1, 0, 0, 0, 0, 0), rtol: float = 1e-10, atol: float = 1e-10, verify: bool = True) -> TimeDepSymmetry:
    """Integrate the determining system from ``init`` given at ``t_span[0]``.

    The span is padded by the verification stencil on both sides so that the
    finite-difference check covers the ends.
    """
    init = np.asarray(init, dtype=float)
    if init.shape != (6,):
        raise TimeDepError("initial vector must have six components (a, a', a'', b, b', f)")
    s0, s1, t0 = _span_in_clock(model, t_span)
    clock = not model.unit_sigma
    y0 = np.concatenate([init, [t0]]) if clock else init
    fun = _rhs(model, clock)
    pad = 3 * _FD_H
    stops = _check_times(s0, s1)
    stencil = (stops[:, None] + _FD_H * np.arange(-3, 4)[None, :]).ravel()
    fwd = integrate(fun, (s0, s1 + pad), y0, rtol, atol, t_eval=stencil[stencil > s0])
    back = integrate(fun, (s0, s0 - pad), y0, rtol, atol, t_eval=stencil[stencil < s0])
    sym = TimeDepSymmetry(model, init, [fwd, back], (s0, s1))
    if verify:
        sym.residual = verify_symmetry(sym)
    return sym


def _check_times(s0, s1, n: int = 41):
    return np.linspace(s0, s1, n)


def _node_values(sym: TimeDepSymmetry, times: np.ndarray) -> np.ndarray:
    """States at exact integration nodes (times were forced as step ends)."""
    out = np.empty((times.size, sym.legs[0].ys.shape[1]))
    for leg in sym.legs:
        for i, s in enumerate(times):
            hit = np.nonzero(leg.ts == s)[0]
            if hit.size:
                out[i] = leg.ys[hit[0]]
    return out


def verify_symmetry(sym: TimeDepSymmetry) -> dict:
    """Determining residuals with ``a''', b'', f'`` estimated by 6th-order differences."""
    s0, s1 = sym.span
    times = _check_times(s0, s1)
    offsets = np.arange(-3, 4)
    stencil = times[:, None] + _FD_H * offsets[None, :]
    vals = _node_values(sym, stencil.ravel()).reshape(stencil.shape + (-1,))
    centre = vals[:, 3, :]
    deriv = np.einsum("j,ijk->ik", _FD6, vals) / _FD_H
    t = centre[:, 6] if centre.shape[1] > 6 else times
    r = determining_residuals(sym.model, centre[:, :6].T, t, (deriv[:, 2], deriv[:, 4], deriv[:, 5]))
    scale = 1.0 + float(np.max(np.abs(centre[:, :6])))
    out = {f"r{i + 1}": float(np.max(np.abs(ri))) for i, ri in enumerate(r)}
    out["scale"] = scale
    out["max_scaled"] = max(out["r1"], out["r2"], out["r3"]) / scale
    return out


def pde_condition_residual(sym: TimeDepSymmetry, xs) -> float:
    """Generic prolongation conditions of the vector field, sampled on (s, x).

    Uses only the model coefficients and the field components (derivatives of
    the field in s by finite differences), so it checks the determining
    equations against the PDE itself.
    """
    s0, s1 = sym.span
    times = _check_times(s0, s1)
    offsets = np.arange(-3, 4)
    stencil = times[:, None] + _FD_H * offsets[None, :]
    xs = np.asarray(xs, dtype=float)
    tau = np.empty(stencil.shape + (xs.size,))
    xi = np.empty_like(tau)
    eta = np.empty_like(tau)
    for j in range(7):
        tau[:, j], xi[:, j], eta[:, j] = sym.vector_field(stencil[:, j], xs)
    d_s = lambda arr: np.einsum("j,ijk->ik", _FD6, arr) / _FD_H  # noqa: E731
    tau_t, xi_t, eta_t = d_s(tau), d_s(xi), d_s(eta)
    tau0, xi0, eta0 = tau[:, 3], xi[:, 3], eta[:, 3]
    hx = xs[1] - xs[0]
    # x-derivatives of the polynomial-in-x components on the x grid
    grad = lambda arr: np.gradient(arr, hx, axis=1, edge_order=2)  # noqa: E731
    xi_x, eta_x = grad(xi0), grad(eta0)
    xi_xx, eta_xx = grad(xi_x), grad(eta_x)
    st = np.atleast_2d(sym.state(times))
    t = st[:, 6] if st.shape[1] > 6 else times
    p, dp, _, q, dq, _ = _coeffs(sym.model, t)
    A = 0.5
    B = p[:, None] - q[:, None] * xs[None, :] - 0.5
    B_t = dp[:, None] - dq[:, None] * xs[None, :]
    c1 = 2 * A * xi_x - tau_t * A
    c2 = -tau_t * B - tau0 * B_t - xi_t + xi0 * q[:, None] - 2 * A * eta_x + A * xi_xx + B * xi_x
    c3 = eta_t - A * eta_xx - B * eta_x
    scale = 1.0 + max(float(np.max(np.abs(v))) for v in (tau0, xi0, eta0))
    return max(float(np.max(np.abs(c))) for c in (c1, c2, c3)) / scale


def _field_rank(elements, xs, rel_tol: float = 1e-8) -> int:
    """Numerical rank of the sampled ``(tau, xi, eta)`` of the given elements."""
    if not elements:
        return 0
    lo, hi = elements[0].span
    ss = np.linspace(lo, hi, 21)
    rows = [np.concatenate([np.ravel(c) for c in el.vector_field(ss, xs)]) for el in elements]
    sv = np.linalg.svd(np.array(rows), compute_uv=False)
    return int(np.sum(sv > rel_tol * sv[0]))


def symmetry_basis(
    model: TimeDepModel, t_span=(0.0, 2.0), rtol: float = 1e-10, atol: float = 1e-10, tol: float = 1e-8
) -> BasisReport:
    """Solutions of the determining system from the six unit initial vectors.

    The dimension is the rank of the sampled vector fields of the elements
    whose determining residuals stay within ``tol``.
    """
    init = np.eye(6)
    elements = [solve_determining(model, t_span, row, rtol, atol) for row in init]
    worst = max(el.residual["max_scaled"] for el in elements)
    good = [el for el in elements if el.residual["max_scaled"] <= tol]
    dim = _field_rank(good, np.linspace(-1.0, 1.0, 9))
    reparam = "s = t" if model.unit_sigma else "s = int_{t0}^{t} sigma(t')^2 dt', p~ = p/sigma^2, q~ = q/sigma^2"
    if dim == 6:
        note = (
            "Six-dimensional solution space: five point symmetries besides the linear one, "
            "plus the infinite family of solution symmetries; same algebra as the heat equation."
        )
    else:
        note = f"Only {dim} verified independent elements (tolerance {tol:g})."
    return BasisReport(elements, dim, init, worst, reparam, note)


def a_span_residual(sym: TimeDepSymmetry, q: float, n: int = 81) -> float:
    """Relative misfit of ``a(s)`` against ``span{1, e^{2qs}, e^{-2qs}}`` (``{1, s, s^2}`` if q = 0)."""
    s0, s1 = sym.span
    ss = np.linspace(s0, s1, n)
    a = sym.coefficients(ss)["a"]
    if q == 0:
        basis = np.column_stack([np.ones_like(ss), ss, ss * ss])
    else:
        basis = np.column_stack([np.ones_like(ss), np.exp(2 * q * ss), np.exp(-2 * q * ss)])
    coef, *_ = np.linalg.lstsq(basis, a, rcond=None)
    return float(np.max(np.abs(basis @ coef - a)) / (1 + np.max(np.abs(a))))


def model_from_strings(p: str, q: str, sigma: str = "1", constants=None) -> TimeDepModel:
    from .expr import parse

    return TimeDepModel(parse(p, constants), parse(q, constants), parse(sigma, constants))


def describe(model: TimeDepModel) -> dict:
    return {"p": to_string(model.p), "q": to_string(model.q), "sigma": to_string(model.sigma)}


__all__ = [
    "BasisReport",
    "TimeDepError",
    "TimeDepModel",
    "TimeDepSymmetry",
    "Trajectory",
    "a_span_residual",
    "describe",
    "determining_residuals",
    "model_from_strings",
    "pde_condition_residual",
    "solve_determining",
    "symmetry_basis",
    "verify_symmetry",
]
