"""Adaptive Dormand-Prince 5(4) stepper for complex array ODEs.

The stepper works on arrays of any shape (state vectors, density matrices)
and keeps the stage derivatives of the last accepted step so the solution
can be evaluated anywhere inside it with the 4th-order dense output.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from ._kernels import scaled_rms, stage_combine
from .errors import StiffnessError

# Butcher tableau (Hairer, Norsett & Wanner, Solving ODEs I, table 5.2)
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th- and embedded 4th-order weights
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# dense output polynomial coefficients (Shampine 1986), columns theta^1..theta^4
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ORDER = 5


class DormandPrince:
    """One-step-at-a-time adaptive integrator for ``dy/dt = fun(t, y)``.

    Call :meth:`step` to advance by one accepted step; afterwards
    :meth:`dense` evaluates the solution in ``[t_prev, t]``.
    """

    def __init__(self, fun: Callable[[float, np.ndarray], np.ndarray], t0: float,
                 y0: np.ndarray, t_bound: float, rtol: float = 1e-8, atol: float = 1e-10,
                 h0: float | None = None, h_max: float = np.inf, h_min: float = 1e-14):
        self.fun = fun
        self.shape = np.shape(y0)
        self.t = float(t0)
        self.y = np.array(y0, dtype=complex).ravel()
        self.t_bound = float(t_bound)
        self.rtol = rtol
        self.atol = atol
        self.h_max = h_max
        self.h_min = h_min
        self.n_eval = 0
        self.n_accepted = 0
        self.n_rejected = 0
        self.t_prev = self.t
        self.y_prev = self.y
        self._K = np.empty((7, self.y.size), dtype=complex)
        self._zero = np.zeros(self.y.size, dtype=complex)
        self._f = self._call(self.t, self.y)
        self.h = h0 if h0 is not None else self._initial_step()

    def _call(self, t, y):
        self.n_eval += 1
        return np.asarray(self.fun(t, y.reshape(self.shape)), dtype=complex).ravel()

    def _norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(np.mean(np.abs(x) ** 2)))

    def _initial_step(self) -> float:
        # Hairer's starting-step heuristic
        scale = self.atol + self.rtol * np.abs(self.y)
        d0 = self._norm(self.y / scale)
        d1 = self._norm(self._f / scale)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        span = self.t_bound - self.t
        h0 = min(h0, span) if span > 0 else h0
        y1 = self.y + h0 * self._f
        f1 = self._call(self.t + h0, y1)
        d2 = self._norm((f1 - self._f) / scale) / h0
        if d1 <= 1e-15 and d2 <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1 / ORDER)
        return min(100 * h0, h1, self.h_max, max(span, self.h_min))

    def _combine(self, coeffs: np.ndarray, n: int, h: float, base: np.ndarray | None):
        # base + h * sum_k coeffs[k] K[k]
        out = np.empty(self.y.size, dtype=complex)
        stage_combine(self._K, np.ascontiguousarray(coeffs[:n], dtype=float), n, h,
                      self._zero if base is None else base, out)
        return out

    def step(self) -> None:
        """Advance by one accepted step (never past ``t_bound``)."""
        t, y = self.t, self.y
        span = self.t_bound - t
        if span <= 0:
            return
        h = min(self.h, self.h_max, span)
        rejected = False
        K = self._K
        while True:
            if h < self.h_min:
                raise StiffnessError("step size underflow", t, h)
            K[0] = self._f
            for i in range(1, 6):
                K[i] = self._call(t + C[i] * h, self._combine(A[i], i, h, y))
            y_new = self._combine(A[6], 6, h, y)
            t_new = t + h if h < span else self.t_bound
            K[6] = self._call(t_new, y_new)
            err = scaled_rms(self._combine(E, 7, h, None), y, y_new, self.atol, self.rtol)
            if err <= 1.0:
                factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** (-1 / ORDER))
                if rejected:
                    factor = min(1.0, factor)
                self.h = h * factor
                break
            self.n_rejected += 1
            h *= max(MIN_FACTOR, SAFETY * err ** (-1 / ORDER))
            rejected = True
        self.n_accepted += 1
        self.t_prev, self.y_prev = t, y
        self.h_last = t_new - t
        self.t, self.y = t_new, y_new
        self._f = K[6].copy()

    @property
    def state(self) -> np.ndarray:
        """Current solution in the shape of ``y0``."""
        return self.y.reshape(self.shape)

    def dense(self, t: float) -> np.ndarray:
        """Solution at ``t`` inside the last accepted step (shape of ``y0``).

        Only valid until the next call to :meth:`step`, which overwrites the
        stage buffer.
        """
        h = self.t - self.t_prev
        if h == 0:
            return self.state.copy()
        theta = (t - self.t_prev) / h
        powers = theta ** np.arange(1, 5)
        return self._combine(P @ powers, 7, h, self.y_prev).reshape(self.shape)

    def restart(self, t: float, y: np.ndarray) -> None:
        """Continue from a new point (e.g. after a quantum jump), keeping ``h``."""
        self.t = float(t)
        self.y = np.array(y, dtype=complex).ravel()
        self.t_prev, self.y_prev = self.t, self.y
        self._f = self._call(self.t, self.y)


def integrate(fun, t_grid: np.ndarray, y0: np.ndarray, rtol: float = 1e-8, atol: float = 1e-10,
              breakpoints=(), h_max: float = np.inf, callback=None, store: bool = True):
    """Integrate over ``t_grid`` and return the solution sampled on it.

    ``breakpoints`` are times where the right-hand side has kinks or jumps;
    the stepper is restarted there so no step straddles one. ``callback``
    (if given) receives every grid sample ``(index, t, y)`` as it is produced.
    With ``store=False`` the samples are only passed to the callback and
    ``None`` is returned in their place (large density matrices).
    Returns ``(samples, stats)``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be ascending")
    t0, t_end = t_grid[0], t_grid[-1]
    stops = sorted({float(b) for b in breakpoints if t0 < b < t_end} | {float(t_end)})
    out = np.empty((len(t_grid),) + np.shape(y0), dtype=complex) if store else None
    if store:
        out[0] = y0
    if callback:
        callback(0, t0, np.asarray(y0, dtype=complex))
    k = 1
    y = np.array(y0, dtype=complex)
    t = t0
    h = None
    stats = {"n_eval": 0, "n_accepted": 0, "n_rejected": 0}
    for stop in stops:
        solver = DormandPrince(fun, t, y, stop, rtol=rtol, atol=atol, h0=h, h_max=h_max)
        while solver.t < stop:
            solver.step()
            while k < len(t_grid) and t_grid[k] <= solver.t:
                sample = solver.state if t_grid[k] == solver.t else solver.dense(t_grid[k])
                if store:
                    out[k] = sample
                if callback:
                    callback(k, t_grid[k], sample)
                k += 1
        h = solver.h
        t, y = solver.t, solver.state
        for key in stats:
            stats[key] += getattr(solver, key)
    return out, stats
