"""Numerical oracles: PDE residuals, a theta-scheme forward solver and symmetry-flow transport.

The solution residual never differentiates the candidate symbolically; it
evaluates ``ln F`` on fourth-order central stencils.  The symmetry residual
uses the generic prolongation conditions for

    F_t = A(v) F_vv + B(v) F_v ,    X = tau(t) d_t + xi(t, v) d_v + a(t, v) F d_F

with exact derivatives of the generator components.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .expr import Expr, as_expr
from .geometry import Grid, ModelSpec
from .ode import integrate


class ResidualError(ValueError):
    pass


class FDError(RuntimeError):
    pass


class FlowError(RuntimeError):
    pass


@dataclass
class ResidualReport:
    max: float
    rms: float
    where: tuple  # (t, v) of the maximum
    shape: tuple
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "max": self.max,
            "rms": self.rms,
            "where": list(self.where),
            "shape": list(self.shape),
            **self.extra,
        }


def _report(values: np.ndarray, tt: np.ndarray, vv: np.ndarray, **extra) -> ResidualReport:
    if not np.all(np.isfinite(values)):
        raise ResidualError("non-finite residual values")
    idx = np.unravel_index(int(np.argmax(values)), values.shape)
    return ResidualReport(
        max=float(values[idx]),
        rms=float(np.sqrt(np.mean(values**2))),
        where=(float(tt[idx]), float(vv[idx])),
        shape=values.shape,
        extra=extra,
    )


def _ln_f_callable(solution):
    if hasattr(solution, "ln_f"):
        return solution.ln_f
    if isinstance(solution, Expr):
        return lambda t, v: solution.eval({"t": t, "x": v, "S": v})
    return solution


def residual(model: ModelSpec, solution, grid: Grid) -> ResidualReport:
    """Relative PDE residual of ``F = exp(lnF)`` on ``grid`` (model coordinates).

    Per point: ``|A(L_vv + L_v^2) + B L_v - L_t| / max(1, |L_t|)``, where ``L``
    is ``ln F`` and every derivative is a 4th-order central difference with
    the grid spacing as step.
    """
    lnf = _ln_f_callable(solution)
    tt, vv = np.meshgrid(grid.t, grid.x, indexing="ij")
    ht, hv = grid.dt, grid.dx

    def ev(t, v):
        out = np.asarray(lnf(t, v), dtype=float)
        out = np.broadcast_to(out, np.shape(t))
        if not np.all(np.isfinite(out)):
            raise ResidualError("solution is not finite on the stencil")
        return out

    l0 = ev(tt, vv)
    lp1, lm1 = ev(tt, vv + hv), ev(tt, vv - hv)
    lp2, lm2 = ev(tt, vv + 2 * hv), ev(tt, vv - 2 * hv)
    lv = (-lp2 + 8 * lp1 - 8 * lm1 + lm2) / (12 * hv)
    lvv = (-lp2 + 16 * lp1 - 30 * l0 + 16 * lm1 - lm2) / (12 * hv**2)
    if ht > 0:
        lt = (-ev(tt + 2 * ht, vv) + 8 * ev(tt + ht, vv) - 8 * ev(tt - ht, vv) + ev(tt - 2 * ht, vv)) / (12 * ht)
    else:
        raise ResidualError("time window has zero width")
    A, B = model.coefficients()
    a_vals = np.broadcast_to(A.eval({model.var: vv}), vv.shape)
    b_vals = np.broadcast_to(B.eval({model.var: vv}), vv.shape)
    lhs = a_vals * (lvv + lv**2) + b_vals * lv - lt
    rel = np.abs(lhs) / np.maximum(1.0, np.abs(lt))
    return _report(rel, tt, vv)


def symbolic_residual(model: ModelSpec, ln_f: Expr, grid: Grid) -> ResidualReport:
    """Same normalisation as :func:`residual` but with exact derivatives."""
    v = model.var
    lv, lt = ln_f.diff(v), ln_f.diff("t")
    lvv = lv.diff(v)
    A, B = model.coefficients()
    tt, vv = np.meshgrid(grid.t, grid.x, indexing="ij")
    env = {"t": tt, v: vv}
    ev = lambda e: np.broadcast_to(e.eval(env), tt.shape)  # noqa: E731
    lt_v, lv_v = ev(lt), ev(lv)
    lhs = ev(A) * (ev(lvv) + lv_v**2) + ev(B) * lv_v - lt_v
    return _report(np.abs(lhs) / np.maximum(1.0, np.abs(lt_v)), tt, vv)


def symmetry_residual(model: ModelSpec, X, grid: Grid) -> ResidualReport:
    """Determining-equation residuals of a point symmetry candidate.

    ``X`` needs ``xi_t`` (in t), ``xi_x`` (in t, v) and ``eta`` (coefficient
    ``a`` of ``F d_F``).  Conditions, each divided by the magnitude scale of
    the generator on the grid:

    - metric: ``2 A xi_v - xi A' - tau' A``
    - drift:  ``-tau' B - xi_t - xi B' - 2 A a_v + A xi_vv + B xi_v``
    - eta:    ``a_t - A a_vv - B a_v``
    """
    v = model.var
    A, B = model.coefficients()
    tau, xi, a = as_expr(X.xi_t), as_expr(X.xi_x), as_expr(X.eta)
    tau_t = tau.diff("t")
    xi_v, xi_t = xi.diff(v), xi.diff("t")
    xi_vv = xi_v.diff(v)
    a_v, a_t = a.diff(v), a.diff("t")
    a_vv = a_v.diff(v)
    tt, vv = np.meshgrid(grid.t, grid.x, indexing="ij")
    env = {"t": tt, v: vv}
    ev = lambda e: np.broadcast_to(np.asarray(e.eval(env), dtype=float), tt.shape)  # noqa: E731
    Av, Bv, Ap, Bp = ev(A), ev(B), ev(A.diff(v)), ev(B.diff(v))
    tau_tv, xiv, xi_vv_, xi_vvv, xi_tv = ev(tau_t), ev(xi), ev(xi_v), ev(xi_vv), ev(xi_t)
    av, a_vv_, a_vvv, a_tv = ev(a), ev(a_v), ev(a_vv), ev(a_t)
    metric = 2 * Av * xi_vv_ - xiv * Ap - tau_tv * Av
    drift = -tau_tv * Bv - xi_tv - xiv * Bp - 2 * Av * a_vv_ + Av * xi_vvv + Bv * xi_vv_
    eta = a_tv - Av * a_vvv - Bv * a_vv_
    scale = 1.0 + max(
        float(np.max(np.abs(m))) for m in (ev(tau), tau_tv, xiv, xi_vv_, xi_tv, av, a_vv_, a_tv)
    )
    parts = {k: np.abs(val) / scale for k, val in (("metric", metric), ("drift", drift), ("eta", eta))}
    total = np.maximum.reduce(list(parts.values()))
    report = _report(total, tt, vv)
    report.extra = {f"{k}_max": float(np.max(val)) for k, val in parts.items()}
    report.extra["scale"] = scale
    return report


# -- forward solver -----------------------------------------------------------------


@dataclass
class GridSolution:
    x: np.ndarray
    t: np.ndarray
    F: np.ndarray  # (n_t, n_x)
    model: ModelSpec

    def __post_init__(self):
        if np.any(self.F <= 0):
            raise FDError("grid solution must be positive")
        if np.any(np.diff(self.x) <= 0) or np.any(np.diff(self.t) <= 0):
            raise FDError("grid spacings must be strictly positive")

    @property
    def ln_F(self) -> np.ndarray:
        return np.log(self.F)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "x", "lnF"])
        lnf = self.ln_F
        for i, ti in enumerate(self.t):
            for j, xj in enumerate(self.x):
                writer.writerow([f"{ti:.17g}", f"{xj:.17g}", f"{lnf[i, j]:.17g}"])
        return buf.getvalue()


def solve_fd(
    model: ModelSpec, g: Expr, grid: Grid, theta: float = 0.5, bc_iterations: int = 30, extrapolation: str = "quadratic"
) -> GridSolution:
    """Theta-scheme march of ``A F_xx + B F_x - F_t = 0`` from ``F(0, x) = g(x)``.

    Space: second-order central differences.  Boundaries: ``ln F`` at an end
    node is extrapolated from the nearest interior nodes, either with the
    one-sided second-order rule ``L_0 = 3 L_1 - 3 L_2 + L_3`` (default) or
    linearly, ``L_0 = 2 L_1 - L_2``.  The rule is imposed implicitly as
    ``F_0 = r F_1`` with the ratio ``r`` refined by fixed-point iteration in
    each step.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if extrapolation == "quadratic":
        ratio = lambda f1, f2, f3: (f1 / f2) ** 2 * (f3 / f2)  # noqa: E731
    elif extrapolation == "linear":
        ratio = lambda f1, f2, f3: f1 / f2  # noqa: E731
    else:
        raise ValueError("extrapolation must be 'quadratic' or 'linear'")
    v = model.var
    x, t = grid.x, grid.t
    n = x.size
    dx, dt = grid.dx, grid.dt
    A, B = model.coefficients()
    Av = np.broadcast_to(A.eval({v: x}), x.shape).astype(float)
    Bv = np.broadcast_to(B.eval({v: x}), x.shape).astype(float)
    lower = Av / dx**2 - Bv / (2 * dx)
    diag = -2 * Av / dx**2
    upper = Av / dx**2 + Bv / (2 * dx)

    F0 = np.broadcast_to(np.asarray(g.eval({v: x}), dtype=float), x.shape).copy()
    if np.any(F0 <= 0):
        raise FDError("initial condition must be positive on the grid")
    out = np.empty((t.size, n))
    out[0] = F0

    def apply_L(F):
        LF = np.zeros_like(F)
        LF[1:-1] = lower[1:-1] * F[:-2] + diag[1:-1] * F[1:-1] + upper[1:-1] * F[2:]
        return LF

    ab = np.zeros((3, n))
    ab[0, 2:] = -theta * dt * upper[1:-1]
    ab[1, 1:-1] = 1 - theta * dt * diag[1:-1]
    ab[2, :-2] = -theta * dt * lower[1:-1]
    ab[1, 0] = ab[1, -1] = 1.0

    F = F0
    for step in range(1, t.size):
        rhs = F + (1 - theta) * dt * apply_L(F)
        rhs[0] = rhs[-1] = 0.0
        guess = F
        for _ in range(bc_iterations):
            r_left = ratio(guess[1], guess[2], guess[3])
            r_right = ratio(guess[-2], guess[-3], guess[-4])
            ab[0, 1] = -r_left
            ab[2, -2] = -r_right
            try:
                new = solve_banded((1, 1), ab, rhs)
            except (LinAlgError, ValueError) as exc:
                raise FDError(f"tridiagonal solve breakdown at step {step}: {exc}") from exc
            guess = new
            if np.any(new[1:4] <= 0) or np.any(new[-4:-1] <= 0):
                break
            n_left = ratio(new[1], new[2], new[3])
            n_right = ratio(new[-2], new[-3], new[-4])
            if abs(n_left - r_left) <= 1e-14 * abs(r_left) and abs(n_right - r_right) <= 1e-14 * abs(r_right):
                break
        F = guess
        if not np.all(np.isfinite(F)) or np.any(F <= 0):
            bad = int(np.argmin(F)) if np.all(np.isfinite(F)) else -1
            raise FDError(f"non-positive value at step {step} (t={t[step]:.6g}, node {bad})")
        out[step] = F
    return GridSolution(x=x.copy(), t=t.copy(), F=out, model=model)


def grid_residual(sol: GridSolution, exclude: int = 5) -> ResidualReport:
    """Residual of a tabulated solution (2nd-order differences, boundary cells dropped)."""
    lnf = sol.ln_F
    dx, dt = sol.x[1] - sol.x[0], sol.t[1] - sol.t[0]
    lv = (lnf[1:-1, 2:] - lnf[1:-1, :-2]) / (2 * dx)
    lvv = (lnf[1:-1, 2:] - 2 * lnf[1:-1, 1:-1] + lnf[1:-1, :-2]) / dx**2
    lt = (lnf[2:, 1:-1] - lnf[:-2, 1:-1]) / (2 * dt)
    xs = sol.x[1:-1]
    A, B = sol.model.coefficients()
    v = sol.model.var
    Av = np.broadcast_to(A.eval({v: xs}), xs.shape)
    Bv = np.broadcast_to(B.eval({v: xs}), xs.shape)
    rel = np.abs(Av * (lvv + lv**2) + Bv * lv - lt) / np.maximum(1.0, np.abs(lt))
    k = max(exclude - 1, 0)
    rel = rel[:, k : rel.shape[1] - k]
    tt, vv = np.meshgrid(sol.t[1:-1], xs[k : xs.size - k], indexing="ij")
    return _report(rel, tt, vv)


# -- flow transport -------------------------------------------------------------------


def transported(X, solution, eps: float, var: str = "x", bounds=None, rtol: float = 1e-12, atol: float = 1e-12):
    """``ln F`` mapped by the time-``eps`` flow of ``X``.

    The value at a target point is obtained by flowing back along ``X`` to the
    source point while accumulating the ``F d_F`` coefficient.
    """
    lnf = _ln_f_callable(solution)
    tau, xi, a = as_expr(X.xi_t), as_expr(X.xi_x), as_expr(X.eta)

    def fn(t, v):
        t_arr = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t_arr.shape, np.shape(v))
        tt = np.broadcast_to(t_arr, shape).ravel()
        vv = np.broadcast_to(np.asarray(v, dtype=float), shape).ravel()

        def rhs(_s, y):
            env = {"t": y[0], var: y[1]}
            return np.stack(
                [
                    -np.broadcast_to(tau.eval(env), y[0].shape),
                    -np.broadcast_to(xi.eval(env), y[0].shape),
                    np.broadcast_to(a.eval(env), y[0].shape),
                ]
            )

        y0 = np.stack([tt, vv, np.zeros_like(tt)])
        traj = integrate(rhs, (0.0, eps), y0, rtol=rtol, atol=atol)
        src_t, src_v, acc = traj.ys[-1]
        if bounds is not None:
            lo, hi = bounds
            if np.any(src_v < lo) or np.any(src_v > hi):
                raise FlowError("flow leaves the grid domain")
        return (np.asarray(lnf(src_t, src_v), dtype=float) + acc).reshape(shape)

    return fn


def flow_transport_check(model: ModelSpec, X, solution, eps: float, grid: Grid, bounds=None, tol: float = 1e-6) -> ResidualReport:
    """Residual of the solution after transport along ``X`` by ``eps``.

    ``extra`` carries the untransported baseline and whether the transported
    residual stays within ``max(10 * baseline, tol)``.
    """
    base = residual(model, solution, grid)
    moved = residual(model, transported(X, solution, eps, model.var, bounds), grid)
    moved.extra = {
        "baseline_max": base.max,
        "eps": eps,
        "passed": bool(moved.max <= max(10 * base.max, tol)),
    }
    return moved
