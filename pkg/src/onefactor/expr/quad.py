"""Adaptive Simpson quadrature and numeric antiderivatives.

The integrator is vectorised: all intervals that still need work are refined
together, so an integrand expression is evaluated on whole arrays.
"""

from __future__ import annotations

import threading

import numpy as np

from .nodes import DomainError, Expr, ExprError, Integral, as_expr


class QuadratureError(ExprError):
    pass


class SingularIntegrandError(QuadratureError):
    pass


def _evaluate(f, x, what="integrand"):
    try:
        y = f(x)
    except DomainError as exc:
        raise SingularIntegrandError(f"{what} singular on interval: {exc}") from exc
    y = np.broadcast_to(np.asarray(y, dtype=float), np.shape(x))
    if not np.all(np.isfinite(y)):
        raise SingularIntegrandError(f"{what} not finite on interval")
    return y


def adaptive_simpson(f, a, b, tol, max_depth: int = 40):
    """Integrate ``f`` over each ``[a_i, b_i]``.

    ``f`` maps an array of abscissae to an array of values.  Each interval is
    bisected until the two-half Simpson estimate agrees with the whole-interval
    estimate to ``15 * tol_i`` (the tolerance halves with each split); the
    returned value carries the Richardson correction.  Every interval gets at
    least two levels of bisection so that a lucky first agreement is not
    accepted.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    tol = np.broadcast_to(np.asarray(tol, dtype=float), a.shape).copy()
    result = np.zeros(a.shape)

    owner = np.arange(a.size)
    lo, hi, tl = a.ravel().copy(), b.ravel().copy(), tol.ravel().copy()
    mid = 0.5 * (lo + hi)
    flo, fmid, fhi = (_evaluate(f, v) for v in (lo, mid, hi))
    whole = (hi - lo) / 6.0 * (flo + 4 * fmid + fhi)
    out = result.ravel()

    for depth in range(max_depth + 1):
        if lo.size == 0:
            return result
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = _evaluate(f, lm), _evaluate(f, rm)
        left = (mid - lo) / 6.0 * (flo + 4 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4 * frm + fhi)
        both = left + right
        delta = both - whole
        scale = np.abs(left) + np.abs(right)
        ok = (np.abs(delta) <= 15.0 * tl) | (np.abs(delta) <= 1e-15 * scale)
        if depth < 2:
            ok[:] = False
        ok |= hi == lo
        np.add.at(out, owner[ok], (both + delta / 15.0)[ok])
        keep = ~ok
        if not keep.any():
            return result
        if depth == max_depth:
            raise QuadratureError(
                f"tolerance not reached within {max_depth} bisections near x={lo[keep][0]:.6g}"
            )
        owner = np.concatenate([owner[keep], owner[keep]])
        new_lo = np.concatenate([lo[keep], mid[keep]])
        new_hi = np.concatenate([mid[keep], hi[keep]])
        flo = np.concatenate([flo[keep], fmid[keep]])
        fhi = np.concatenate([fmid[keep], fhi[keep]])
        fmid = np.concatenate([flm[keep], frm[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        tl = np.concatenate([tl[keep], tl[keep]]) / 2.0
        lo, hi = new_lo, new_hi
        mid = 0.5 * (lo + hi)
    return result


class NumericFunction:
    """``u(x) = integral of integrand from x_ref to x``.

    Values are assembled from a lazily extended table of knots spaced
    ``KNOT`` apart (integrated once, cumulatively) plus a short adaptive
    Simpson leg from the nearest knot.  ``u(x_ref) == 0`` exactly.
    The table is the only mutable state and is guarded by a lock.
    """

    KNOT = 1.0 / 32.0
    # nominal interval length over which the tolerance budget is spread
    SPAN = 16.0

    def __init__(self, integrand: Expr, var: str = "x", x_ref: float = 0.0, tol: float = 1e-10):
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        self.integrand = as_expr(integrand)
        self.var = var
        self.x_ref = float(x_ref)
        self.tol = float(tol)
        self._lock = threading.Lock()
        self._kmin = 0
        self._table = np.zeros(1)  # values at knots kmin .. kmin+len-1

    def _f(self, x):
        return self.integrand.eval({self.var: x})

    def _seg_tol(self, length):
        return np.maximum(self.tol * np.abs(length) / self.SPAN, 1e-16)

    def _extend(self, kmin: int, kmax: int):
        h = self.KNOT
        cur_min, cur_max = self._kmin, self._kmin + self._table.size - 1
        table = self._table
        if kmax > cur_max:
            ks = np.arange(cur_max, kmax)
            lo = self.x_ref + ks * h
            seg = adaptive_simpson(self._f, lo, lo + h, self._seg_tol(h))
            table = np.concatenate([table, table[-1] + np.cumsum(seg)])
        if kmin < cur_min:
            ks = np.arange(cur_min, kmin, -1)
            hi = self.x_ref + ks * h
            seg = adaptive_simpson(self._f, hi - h, hi, self._seg_tol(h))
            table = np.concatenate([(table[0] - np.cumsum(seg))[::-1], table])
            self._kmin = kmin
        self._table = table

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise QuadratureError("non-finite abscissa")
        if arr.size > 64:
            # mesh inputs repeat abscissae; integrate each distinct value once
            flat, inverse = np.unique(arr.ravel(), return_inverse=True)
            out = self._values(flat)[inverse].reshape(arr.shape)
            return out
        out = self._values(arr.ravel()).reshape(arr.shape)
        return out if out.ndim else float(out)

    def _values(self, flat):
        k = np.rint((flat - self.x_ref) / self.KNOT).astype(np.int64)
        with self._lock:
            if flat.size:
                lo_k, hi_k = int(k.min()), int(k.max())
                if lo_k < self._kmin or hi_k > self._kmin + self._table.size - 1:
                    self._extend(min(lo_k, self._kmin), max(hi_k, self._kmin + self._table.size - 1))
            base = self._table[k - self._kmin]
        knot_x = self.x_ref + k * self.KNOT
        leg = np.zeros_like(flat)
        nz = flat != knot_x
        if nz.any():
            leg[nz] = adaptive_simpson(self._f, knot_x[nz], flat[nz], self._seg_tol(flat[nz] - knot_x[nz]))
        return base + leg

    def as_expr(self) -> Integral:
        return Integral(self)

    def __repr__(self):
        return f"NumericFunction({self.integrand}, x_ref={self.x_ref})"


def antiderivative(e: Expr, v: str = "x", x_ref: float = 0.0, tol: float = 1e-10) -> NumericFunction:
    """Numeric antiderivative of ``e`` in ``v`` anchored so that ``u(x_ref) = 0``."""
    return NumericFunction(e, v, x_ref, tol)
