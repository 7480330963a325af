"""One-dimensional metric ``2/sigma^2 dx^2``, its homothetic algebra and the drift field.

The model PDE in log-price ``x`` reads

    (sigma^2/2) F_xx + b_eff F_x - F_t = 0,   b_eff = kappa (mu - lambda - x) - sigma^2/2

and is rewritten against the Laplacian of the metric above as
``Delta F - C^x F_x - F_t = 0`` with ``b_eff = sigma sigma_x / 2 - C^x``.
All Lie derivatives are taken with covariant components
(``Y_x = g_xx Y^x``, ``C_x = g_xx C^x``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import Const, Expr, NumericFunction, S, X, as_expr, exp, ln, substitute


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform (t, x) window used for grid decisions and residual checks."""

    x_min: float = -1.0
    x_max: float = 1.0
    n_x: int = 401
    t_min: float = 0.0
    t_max: float = 2.0
    n_t: int = 201

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ModelError("grid needs x_min < x_max")
        if self.n_x < 16:
            raise ModelError("grid too small: need at least 16 x points")
        if self.t_max < self.t_min or self.n_t < 2:
            raise ModelError("invalid time window")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_t)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_t - 1)


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the one-factor PDE.

    Either ``kappa``, ``mu`` and ``lam`` are all given, or (x coordinates only)
    the contravariant drift ``drift`` = C^x is given directly.
    """

    sigma: Expr
    kappa: Expr | None = None
    mu: Expr | None = None
    lam: Expr | None = None
    drift: Expr | None = None
    coords: str = "x"
    name: str = ""
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.coords not in ("x", "S"):
            raise ModelError(f"unknown coordinate tag {self.coords!r}")
        have_market = all(v is not None for v in (self.kappa, self.mu, self.lam))
        if self.drift is None and not have_market:
            raise ModelError("model needs kappa, mu and lambda, or a drift C^x")
        if self.drift is not None and self.coords == "S":
            raise ModelError("a direct drift is only supported in x coordinates")

    @property
    def var(self) -> str:
        return self.coords

    def coefficients(self) -> tuple[Expr, Expr]:
        """``(A, B)`` with the PDE written as ``A F_vv + B F_v - F_t = 0``."""
        sig = self.sigma
        if self.coords == "S":
            return sig * sig * S * S / 2, self.kappa * (self.mu - self.lam - ln(S)) * S
        if self.drift is not None:
            return sig * sig / 2, sig * sig.diff("x") / 2 - self.drift
        return sig * sig / 2, self.kappa * (self.mu - self.lam - X) - sig * sig / 2


def constant_model(kappa: float, mu: float, lam: float, sigma0: float, coords: str = "x") -> ModelSpec:
    return ModelSpec(
        sigma=as_expr(sigma0),
        kappa=as_expr(kappa),
        mu=as_expr(mu),
        lam=as_expr(lam),
        coords=coords,
        name="constant",
        params={"kappa": kappa, "mu": mu, "lambda": lam, "sigma0": sigma0},
    )


def log_transform(model: ModelSpec) -> ModelSpec:
    """Rewrite an S-coordinate model in ``x = ln S`` (substitute ``S -> e^x``)."""
    if model.coords == "x":
        return model
    sub = lambda e: None if e is None else substitute(e, "S", exp(X))  # noqa: E731
    return ModelSpec(
        sigma=sub(model.sigma),
        kappa=sub(model.kappa),
        mu=sub(model.mu),
        lam=sub(model.lam),
        coords="x",
        name=model.name,
        params=dict(model.params),
    )


@dataclass(frozen=True)
class Metric1D:
    sigma: Expr

    @property
    def g_xx(self) -> Expr:
        return 2 / (self.sigma * self.sigma)

    def validate(self, xs) -> None:
        vals = np.broadcast_to(self.sigma.eval({"x": xs}), np.shape(xs))
        if np.any(vals <= 0):
            bad = np.asarray(xs)[vals <= 0][0]
            raise ModelError(f"sigma must be positive on the grid (sigma({bad:.6g}) <= 0)")

    def u_function(self, x_ref: float = 0.0, tol: float = 1e-10) -> NumericFunction:
        return NumericFunction(1 / self.sigma, "x", x_ref, tol)

    def u(self, x_ref: float = 0.0, offset: float = 0.0, tol: float = 1e-10) -> Expr:
        """``u(x) = offset + integral_{x_ref}^{x} dx / sigma`` as an expression.

        Exact (affine) when sigma is a constant, a quadrature leaf otherwise.
        """
        if isinstance(self.sigma, Const):
            return (X - x_ref) / self.sigma.value + offset
        return self.u_function(x_ref, tol).as_expr() + offset


@dataclass(frozen=True)
class SpaceVectorField:
    component: Expr  # Y^x
    metric: Metric1D
    psi: float
    name: str = "Y"

    @property
    def covariant(self) -> Expr:
        return self.metric.g_xx * self.component


@dataclass(frozen=True)
class DriftField:
    C_contra: Expr
    C_cov: Expr
    b_eff: Expr


def drift_from_model(model: ModelSpec, xs=None) -> DriftField:
    """Contravariant, covariant and plain first-order drift of an x-model."""
    if model.coords != "x":
        model = log_transform(model)
    sig = model.sigma
    if xs is not None:
        vals = np.broadcast_to(sig.eval({"x": xs}), np.shape(xs))
        if np.any(vals == 0):
            raise ModelError("sigma vanishes on the grid")
    if model.drift is not None:
        c_contra = model.drift
    else:
        c_contra = -(model.kappa * (model.mu - model.lam - X) - sig * sig / 2 - sig * sig.diff("x") / 2)
    return DriftField(
        C_contra=c_contra,
        C_cov=2 * c_contra / (sig * sig),
        b_eff=sig * sig.diff("x") / 2 - c_contra,
    )


def market_term(drift: DriftField, sigma: Expr) -> Expr:
    """Recover ``kappa (mu - lambda - x)`` from ``C^x`` and ``sigma``."""
    return -drift.C_contra + sigma * sigma / 2 + sigma * sigma.diff("x") / 2


def homothetic_basis(
    metric: Metric1D, x_ref: float = 0.0, offset: float = 0.0, tol: float = 1e-10
) -> tuple[SpaceVectorField, SpaceVectorField]:
    """Gradient Killing vector ``sigma d_x`` and homothetic vector ``sigma u d_x``."""
    u = metric.u(x_ref, offset, tol)
    k1 = SpaceVectorField(metric.sigma, metric, 0.0, "K1")
    h = SpaceVectorField(metric.sigma * u, metric, 1.0, "H")
    return k1, h


def lie_derivative_metric(Y: SpaceVectorField) -> Expr:
    """``(L_Y g)_xx = Y^x g_xx' + 2 g_xx (Y^x)'``."""
    g = Y.metric.g_xx
    return Y.component * g.diff("x") + 2 * g * Y.component.diff("x")


def homothetic_factor(Y: SpaceVectorField, xs) -> np.ndarray:
    """Pointwise ``psi`` read back from ``L_Y g = 2 psi g``."""
    lie = lie_derivative_metric(Y).eval({"x": xs})
    g = Y.metric.g_xx.eval({"x": xs})
    return np.asarray(lie / (2 * g), dtype=float)


def lie_derivative_cov(Y: SpaceVectorField, C: DriftField) -> Expr:
    """``(L_Y C)_x = Y^x dC_x/dx + C_x dY^x/dx``."""
    return Y.component * C.C_cov.diff("x") + C.C_cov * Y.component.diff("x")
