"""Dormand-Prince 5(4) integrator with step control and cubic Hermite dense output.

Shared by the time-dependent determining system and by symmetry-flow transport.
States may be arrays of any shape; the error norm is the RMS of the scaled
local error over all components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    pass


# Dormand-Prince tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class Trajectory:
    ts: np.ndarray  # node times, strictly monotone
    ys: np.ndarray  # node states, shape (n, *state_shape)
    fs: np.ndarray  # derivatives at nodes
    n_steps: int
    n_rejected: int

    def __call__(self, t):
        """Cubic Hermite interpolation of the state at time(s) ``t``."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        forward = self.ts[-1] >= self.ts[0]
        ts = self.ts if forward else self.ts[::-1]
        ys = self.ys if forward else self.ys[::-1]
        fs = self.fs if forward else self.fs[::-1]
        lo_t, hi_t = ts[0], ts[-1]
        span = max(abs(hi_t - lo_t), 1.0)
        if np.any(t_arr < lo_t - 1e-12 * span) or np.any(t_arr > hi_t + 1e-12 * span):
            raise IntegrationError("dense output requested outside the integrated span")
        idx = np.clip(np.searchsorted(ts, t_arr, side="right") - 1, 0, ts.size - 2)
        t0, t1 = ts[idx], ts[idx + 1]
        h = t1 - t0
        s = ((t_arr - t0) / h).reshape((-1,) + (1,) * (ys.ndim - 1))
        hh = h.reshape(s.shape)
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = h00 * ys[idx] + h10 * hh * fs[idx] + h01 * ys[idx + 1] + h11 * hh * fs[idx + 1]
        return out if np.ndim(t) else out[0]


def integrate(
    fun,
    t_span: tuple[float, float],
    y0,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    t_eval=None,
    h0: float | None = None,
    max_steps: int = 200_000,
) -> Trajectory:
    """Integrate ``y' = fun(t, y)`` over ``t_span``.

    Steps are clipped so that every time in ``t_eval`` is an integration node;
    values there are not interpolated.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    y = np.array(y0, dtype=float)
    direction = 1.0 if t1 >= t0 else -1.0
    length = abs(t1 - t0)
    stops = []
    if t_eval is not None:
        stops = sorted({float(v) for v in np.atleast_1d(t_eval)}, key=lambda v: direction * v)
        stops = [v for v in stops if direction * (v - t0) > 0 and direction * (t1 - v) > 0]
    stops.append(t1)

    f = np.asarray(fun(t0, y), dtype=float)
    ts, ys, fs = [t0], [y.copy()], [f.copy()]
    if length == 0:
        return Trajectory(np.array(ts), np.array(ys), np.array(fs), 0, 0)

    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2))
        d1 = np.sqrt(np.mean((f / scale) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, length)
    h = abs(h0)
    h_min = 1e-14 * max(1.0, abs(t0), abs(t1))

    t = t0
    n_steps = n_rejected = 0
    stop_i = 0
    while stop_i < len(stops):
        target = stops[stop_i]
        if n_steps + n_rejected > max_steps:
            raise IntegrationError("maximum number of steps exceeded")
        remaining = abs(target - t)
        clipped = h >= remaining
        step = remaining if clipped else h
        k = [f]
        # overflow surfaces below as a non-finite error norm
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(1, 7):
                yi = y + direction * step * sum(a * kj for a, kj in zip(_A[i], k))
                k.append(np.asarray(fun(t + direction * step * _C[i], yi), dtype=float))
            y_new = y + direction * step * sum(b * kj for b, kj in zip(_B5, k) if b != 0)
            err = direction * step * sum(e * kj for e, kj in zip(_E, k))
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if not np.isfinite(err_norm):
            raise IntegrationError("non-finite state during integration")
        if err_norm <= 1.0:
            t = target if clipped else t + direction * step
            y = y_new
            f = k[6]  # FSAL
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
            n_steps += 1
            if clipped:
                stop_i += 1
            factor = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
            # a clipped step says nothing about the natural step length
            h = max(h, step * factor) if clipped else step * factor
        else:
            n_rejected += 1
            h = step * max(0.2, 0.9 * err_norm ** -0.2)
            if h < h_min:
                raise StepSizeUnderflow(f"step size underflow at t={t:.6g}")
    return Trajectory(np.array(ts), np.array(ys), np.array(fs), n_steps, n_rejected)
