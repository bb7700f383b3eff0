"""Estimation of the coherent amplitudes alpha_j(t) along the schedule.

The variational estimate maximizes the largest eigenvalue of the projected
Hamiltonian over the amplitudes of all KPOs jointly (the annealer follows the
highest-energy state because K < 0). The search is a deterministic coordinate
ascent: coarse grid scan per coordinate, golden-section refinement, repeated
sweeps until the objective stops improving.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InvalidParameterError
from .model import NetworkSpec, SpinExpansion
from .spin_projection import estimate_alpha_analytic

logger = logging.getLogger(__name__)

GRID_STEP = 0.05
GOLDEN_TOL = 1e-4
SWEEP_TOL = 1e-10
MAX_SWEEPS = 50
NOISE_REL = 1e-12
DENSE_EIG_MAX_KPOS = 6
INV_PHI = (math.sqrt(5) - 1) / 2


def max_eigenvalue(H: np.ndarray, n_kpos: int) -> np.ndarray:
    """Largest eigenvalue of a Hermitian matrix or a stack of them."""
    if n_kpos <= DENSE_EIG_MAX_KPOS:
        return np.linalg.eigvalsh(H)[..., -1]
    if H.ndim == 3:
        return np.array([_power_max(h) for h in H])
    return _power_max(H)


def _power_max(H: np.ndarray, tol: float = 1e-12, max_iter: int = 20000) -> float:
    # shift so the top of the spectrum dominates in magnitude
    shift = np.abs(H).sum(axis=1).max()
    M = H + shift * np.eye(len(H))
    v = np.ones(len(H), dtype=complex) / math.sqrt(len(H))
    lam = 0.0
    for _ in range(max_iter):
        w = M @ v
        lam_new = np.vdot(v, w).real
        v = w / np.linalg.norm(w)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new - shift
        lam = lam_new
    raise ConvergenceError("power iteration did not converge", best=v, value=lam - shift)


def golden_section_max(f: Callable[[float], float], lo: float, hi: float,
                       tol: float = GOLDEN_TOL) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    x1 = hi - INV_PHI * (hi - lo)
    x2 = lo + INV_PHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - INV_PHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + INV_PHI * (hi - lo)
            f2 = f(x2)
    return (x1, f1) if f1 >= f2 else (x2, f2)


@dataclass
class AlphaSearch:
    alphas: np.ndarray
    value: float
    history: list[float] = field(default_factory=list)
    sweeps: int = 0


def search_upper_bounds(network: NetworkSpec, t: float) -> np.ndarray:
    """Per-KPO scan range ``1.2 sqrt(-p_j(t)/K_j) + 0.5``."""
    bare = np.sqrt(np.maximum(network.pumps(t) / -network.kerrs, 0.0))
    return 1.2 * bare + 0.5


def coordinate_ascent(objective_batch: Callable[[np.ndarray], np.ndarray],
                      uppers: Sequence[float], start: Sequence[float] | None = None,
                      grid_step: float = GRID_STEP, golden_tol: float = GOLDEN_TOL,
                      sweep_tol: float = SWEEP_TOL, max_sweeps: int = MAX_SWEEPS) -> AlphaSearch:
    """Deterministic derivative-free maximization over the box ``[0, uppers]``.

    ``objective_batch`` maps an ``(M, N)`` array of candidates to ``M`` values.
    Every accepted move is an improvement, so ``history`` is non-decreasing.
    Differences below ``1e-12`` of the objective scale are treated as ties,
    and among tied coarse-grid maxima the smallest amplitude wins.
    """
    n = len(uppers)
    alpha = np.zeros(n) if start is None else np.clip(np.array(start, dtype=float), 0, uppers)
    best = float(objective_batch(alpha[None, :])[0])
    history = [best]

    for sweep in range(1, max_sweeps + 1):
        before = best
        for j in range(n):
            grid = np.arange(0.0, uppers[j] + 0.5 * grid_step, grid_step)
            cands = np.repeat(alpha[None, :], len(grid), axis=0)
            cands[:, j] = grid
            vals = objective_batch(cands)
            top = vals.max()
            # eigensolver round-off; smaller differences count as ties
            noise = NOISE_REL * max(1.0, float(np.abs(vals).max()))
            i = int(np.argmax(vals >= top - noise))
            x, fx = grid[i], float(vals[i])
            lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
            if hi > lo:
                def along(a, j=j):
                    c = alpha.copy()
                    c[j] = a
                    return float(objective_batch(c[None, :])[0])
                xg, fg = golden_section_max(along, lo, hi, golden_tol)
                if fg > fx + noise:
                    x, fx = xg, fg
            if fx > best + noise:
                alpha[j] = x
                best = fx
                history.append(best)
        if best - before < sweep_tol:
            return AlphaSearch(alpha, best, history, sweep)
    raise ConvergenceError(f"coordinate ascent not converged after {max_sweeps} sweeps",
                           best=alpha, value=best)


def estimate_alpha_max(network: NetworkSpec, t: float, start: Sequence[float] | None = None,
                       expansion: SpinExpansion | None = None,
                       return_search: bool = False):
    """Amplitudes maximizing the top eigenvalue of ``P H(t) P^dagger``."""
    if network.n_kpos > 12:
        raise InvalidParameterError("variational alpha estimate supports at most 12 KPOs")
    exp = expansion or SpinExpansion(network)

    def objective(cands):
        return max_eigenvalue(exp.hamiltonian(cands, t), network.n_kpos)

    search = coordinate_ascent(objective, search_upper_bounds(network, t), start)
    return search if return_search else search.alphas


def analytic_alphas(network: NetworkSpec, t: float) -> np.ndarray:
    delta = network.detuning(t)
    return np.array([estimate_alpha_analytic(p, delta, k)
                     for p, k in zip(network.pumps(t), network.kerrs)])


@dataclass(frozen=True)
class AlphaTrajectory:
    """Amplitudes ``alphas[i, j]`` of KPO ``j`` at ``times[i]`` (us)."""

    times: np.ndarray
    alphas: np.ndarray
    method: str = "variational"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        alphas = np.asarray(self.alphas, dtype=float)
        if alphas.ndim != 2 or alphas.shape[0] != len(times):
            raise InvalidParameterError("alphas must have shape (len(times), n_kpos)")
        if np.any(np.diff(times) <= 0):
            raise InvalidParameterError("times must be strictly ascending")
        if np.any(alphas < 0):
            raise InvalidParameterError("amplitudes must be >= 0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "alphas", alphas)

    @property
    def n_kpos(self) -> int:
        return self.alphas.shape[1]

    def __call__(self, t: float) -> np.ndarray:
        """Piecewise-linear interpolation at ``t``."""
        return np.array([np.interp(t, self.times, self.alphas[:, j]) for j in range(self.n_kpos)])

    def is_monotone(self, tol: float = 1e-9) -> bool:
        return bool(np.all(np.diff(self.alphas, axis=0) >= -tol))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_us"] + [f"alpha_{j}" for j in range(self.n_kpos)])
            for t, row in zip(self.times, self.alphas):
                writer.writerow([repr(float(t))] + [repr(float(a)) for a in row])

    @classmethod
    def from_csv(cls, path, method: str = "variational") -> "AlphaTrajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:], method)


def schedule_grid(network: NetworkSpec, n_points: int | None = None) -> np.ndarray:
    """Uniform grid over the whole schedule, with the schedule breakpoints added."""
    sched = network.schedule
    n = n_points or sched.grid_points
    grid = np.linspace(0.0, sched.t_end, n)
    return np.unique(np.concatenate([grid, sched.breakpoints]))


def build_alpha_trajectory(network: NetworkSpec, grid: Sequence[float] | None = None,
                           method: str = "variational") -> AlphaTrajectory:
    """Amplitudes on ``grid`` (default: :func:`schedule_grid`).

    The variational search at each point starts from the previous solution.
    """
    times = schedule_grid(network) if grid is None else np.asarray(grid, dtype=float)
    if method == "analytic":
        alphas = np.array([analytic_alphas(network, t) for t in times])
    elif method == "variational":
        exp = SpinExpansion(network)
        alphas = np.empty((len(times), network.n_kpos))
        prev = None
        for i, t in enumerate(times):
            prev = estimate_alpha_max(network, t, start=prev, expansion=exp)
            alphas[i] = prev
    else:
        raise InvalidParameterError(f"unknown alpha method {method!r}")
    traj = AlphaTrajectory(times, alphas, method)
    if not traj.is_monotone():
        logger.info("alpha trajectory (%s) is not monotone in t", method)
    return traj
