"""Time evolution: Lindblad master equation and quantum-trajectory unraveling.

A *system* is any object with

* ``dim``: Hilbert-space dimension,
* ``hamiltonian(t)``, ``effective_hamiltonian(t)`` (``H - i/2 sum r C^dag C``),
* ``apply_effective(t, psi)`` (``H_eff psi``, a constant real energy shift is allowed),
* ``collapse_operators(t)``: list of ``(C, rate)`` so the dissipator is
  ``rate * (C rho C^dag - {C^dag C, rho} / 2)``,
* ``time_dependent_collapse``: whether the collapse list changes with ``t``.

:class:`kpoanneal.model.FockSystem` and :class:`kpoanneal.model.SpinSystem`
implement it; :class:`StaticSystem` wraps fixed matrices.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (IntegrityError, InvalidDimensionError, InvalidParameterError,
                     NumericalConsistencyError, StiffnessError)
from ._kernels import lindblad_apply, trajectory_kernel
from .integrate import A as TABLEAU_A
from .integrate import C as TABLEAU_C
from .integrate import E as TABLEAU_E
from .integrate import P as TABLEAU_P
from .integrate import DormandPrince, integrate
from .fock_ops import kron_embed
from .model import FockSystem, config_labels
from .spin_projection import network_projectors, project_state, spin_coefficients

logger = logging.getLogger(__name__)

RTOL = 1e-8
ATOL = 1e-10
# density-matrix validity (input check) and breach thresholds (100x)
TRACE_TOL = 1e-8
HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = 1e-8
BREACH_FACTOR = 100.0
JUMP_NORM_TOL = 1e-10
LEAKAGE_WARNING = 0.2
# truncations used in practice (27/30 levels at alpha ~ 3.5) leave Poisson
# tails ~1e-4, so the readout projectors use a looser check than state prep
READOUT_TAIL_TOL = 1e-3


# ---------------------------------------------------------------- systems

class StaticSystem:
    """Fixed Hamiltonian (matrix or callable of ``t``) and collapse list."""

    def __init__(self, hamiltonian, collapse: Sequence = ()):
        self._H = hamiltonian
        self.collapse = [(op, float(rate)) for op, rate in collapse]
        H0 = self.hamiltonian(0.0)
        self.dim = H0.shape[0]
        for op, _ in self.collapse:
            if op.shape != H0.shape:
                raise InvalidDimensionError(f"collapse operator shape {op.shape} != {H0.shape}")
        self._damping = sum((-0.5j * r * (op.conj().T @ op) for op, r in self.collapse),
                            start=np.zeros(H0.shape, dtype=complex))

    time_dependent_collapse = False

    def hamiltonian(self, t: float):
        return self._H(t) if callable(self._H) else self._H

    def collapse_operators(self, t: float | None = None):
        return self.collapse

    def effective_hamiltonian(self, t: float):
        return self.hamiltonian(t) + self._damping

    def apply_effective(self, t: float, psi: np.ndarray) -> np.ndarray:
        return self.effective_hamiltonian(t) @ psi


def _split_collapse(collapse):
    """Separate diagonal collapse operators (elementwise dissipator) from the rest."""
    diag, general = [], []
    for op, rate in collapse:
        if rate == 0:
            continue
        M = sp.csr_matrix(op)
        off = M - sp.diags(M.diagonal())
        off.eliminate_zeros()
        if off.nnz == 0:
            diag.append((np.asarray(M.diagonal()), rate))
        else:
            general.append((op, rate))
    return diag, general


def _aligned_terms(terms):
    """Common CSR pattern and per-term data arrays aligned to it."""
    union = sum(abs(sp.csr_matrix(t)) * (k + 1.0) for k, t in enumerate(terms))
    union = sp.csr_matrix(union)
    union.sort_indices()
    rows = np.repeat(np.arange(union.shape[0]), np.diff(union.indptr))
    data = np.array([np.asarray(sp.csr_matrix(t)[rows, union.indices]).ravel()
                     for t in terms], dtype=complex)
    return union.indptr.astype(np.int64), union.indices.astype(np.int64), data


def _compiled_rhs(system):
    """Kernel-backed right-hand side, or ``None`` when the system does not qualify."""
    if system.time_dependent_collapse or not hasattr(system, "effective_decomposition"):
        return None
    diag, general = _split_collapse(system.collapse_operators(0.0))
    D = system.dim
    jump_src = np.full((len(general), D), -1, dtype=np.int64)
    jump_val = np.zeros((len(general), D), dtype=complex)
    for c, (op, _) in enumerate(general):
        M = sp.csr_matrix(op)
        counts = np.diff(M.indptr)
        if counts.max(initial=0) > 1:
            return None
        rows = np.flatnonzero(counts)
        jump_src[c, rows] = M.indices[M.indptr[rows]]
        jump_val[c, rows] = M.data[M.indptr[rows]]
    jump_rate = np.array([r for _, r in general], dtype=float)
    diag_ops = np.array([d for d, _ in diag], dtype=complex).reshape(len(diag), D)
    diag_rate = np.array([r for _, r in diag], dtype=float)
    terms, coefficients = system.effective_decomposition()
    indptr, indices, data = _aligned_terms(terms)

    def rhs(t, rho):
        out = np.empty_like(rho)
        lindblad_apply(indptr, indices, coefficients(t) @ data, np.ascontiguousarray(rho),
                       jump_src, jump_val, jump_rate, diag_ops, diag_rate, out)
        return out

    return rhs


def lindblad_rhs(system, compiled: bool = True) -> Callable[[float, np.ndarray], np.ndarray]:
    """``drho/dt = -i[H, rho] + sum rate D[C] rho`` as ``G + G^dag``.

    ``G = -i H_eff rho + 1/2 sum rate C rho C^dag``; the result is exactly
    Hermitian whenever ``rho`` is. Sparse systems with static collapse
    operators use the compiled kernel unless ``compiled`` is false.
    """
    if compiled:
        fast = _compiled_rhs(system)
        if fast is not None:
            return fast
    if hasattr(system, "dense_lindblad"):
        def dense_rhs(t, rho):
            H_eff, ops = system.dense_lindblad(t)
            G = -1j * (H_eff @ rho)
            for C, rate in ops:
                G += (0.5 * rate) * (C @ rho @ C.conj().T)
            return G + G.conj().T

        return dense_rhs
    static = not system.time_dependent_collapse
    if static:
        fixed = _split_collapse(system.collapse_operators(0.0))

    def rhs(t, rho):
        diag, general = fixed if static else _split_collapse(system.collapse_operators(t))
        G = -1j * (system.effective_hamiltonian(t) @ rho)
        for d, rate in diag:
            G += (0.5 * rate) * (d[:, None] * rho * d.conj()[None, :])
        for C, rate in general:
            G += (0.5 * rate) * (C @ (C @ rho).conj().T)
        return G + G.conj().T

    return rhs


# ---------------------------------------------------------------- master equation

@dataclass
class MasterSolution:
    times: np.ndarray
    states: np.ndarray | None
    series: dict[str, np.ndarray]
    diagnostics: dict


def density_matrix(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def check_density_matrix(rho: np.ndarray, trace_tol: float = TRACE_TOL,
                         hermitian_tol: float = HERMITIAN_TOL,
                         positivity_tol: float = POSITIVITY_TOL) -> dict:
    """Trace, Hermiticity and positivity deviations; raises if outside tolerance."""
    stats = density_stats(rho)
    if stats["trace_dev"] > trace_tol:
        raise InvalidParameterError(f"trace deviates from 1 by {stats['trace_dev']:.3g}")
    if stats["hermitian_dev"] > hermitian_tol:
        raise InvalidParameterError(f"not Hermitian ({stats['hermitian_dev']:.3g})")
    if stats["min_eig"] < -positivity_tol:
        raise InvalidParameterError(f"negative eigenvalue {stats['min_eig']:.3g}")
    return stats


def density_stats(rho: np.ndarray, eigen: bool = True) -> dict:
    out = {"trace_dev": abs(np.trace(rho) - 1.0),
           "hermitian_dev": float(np.max(np.abs(rho - rho.conj().T)))}
    if eigen:
        out["min_eig"] = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    return out


def evolve_master(system, rho0: np.ndarray, t_grid: Sequence[float], rtol: float = RTOL,
                  atol: float = ATOL, breakpoints: Sequence[float] = (),
                  observe: Callable[[float, np.ndarray], dict] | None = None,
                  store: bool = True, eig_every: int = 1) -> MasterSolution:
    """Integrate the Lindblad equation and sample ``rho`` on ``t_grid``.

    The trace is never renormalized; its drift, the Hermiticity error and the
    smallest eigenvalue are tracked in ``diagnostics`` (eigenvalues on every
    ``eig_every``-th sample and the last one). A breach of more than 100x the
    density-matrix tolerances raises :class:`IntegrityError`. ``observe`` is
    called on every sample and its values are collected in ``series``.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (system.dim, system.dim):
        raise InvalidDimensionError(f"rho0 shape {rho0.shape} != system dim {system.dim}")
    check_density_matrix(rho0)
    t_grid = np.asarray(t_grid, dtype=float)
    n = len(t_grid)
    series: dict[str, np.ndarray] = {}
    diag = {"max_trace_dev": 0.0, "max_hermitian_dev": 0.0, "min_eig": np.inf}

    def callback(k, t, rho):
        stats = density_stats(rho, eigen=(k % eig_every == 0 or k == n - 1))
        diag["max_trace_dev"] = max(diag["max_trace_dev"], stats["trace_dev"])
        diag["max_hermitian_dev"] = max(diag["max_hermitian_dev"], stats["hermitian_dev"])
        if "min_eig" in stats:
            diag["min_eig"] = min(diag["min_eig"], stats["min_eig"])
        if (stats["trace_dev"] > BREACH_FACTOR * TRACE_TOL
                or stats["hermitian_dev"] > BREACH_FACTOR * HERMITIAN_TOL
                or stats.get("min_eig", 0.0) < -BREACH_FACTOR * POSITIVITY_TOL):
            raise IntegrityError(f"density matrix invalid at t={t:.6g}: {stats}")
        if observe is not None:
            for key, value in observe(t, rho).items():
                series.setdefault(key, np.full(n, np.nan))[k] = value

    start = time.perf_counter()
    states, stats = integrate(lindblad_rhs(system), t_grid, rho0, rtol=rtol, atol=atol,
                              breakpoints=breakpoints, callback=callback, store=store)
    diag.update(stats)
    diag["wall_time_s"] = time.perf_counter() - start
    return MasterSolution(t_grid, states, series, diag)


# ---------------------------------------------------------------- trajectories

@dataclass
class TrajectoryRecord:
    index: int
    samples: np.ndarray
    jumps: list[tuple[float, int]]
    n_steps: int


@dataclass
class TrajectoryEnsemble:
    times: np.ndarray
    names: list[str]
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    jumps: list[list[tuple[float, int]]]
    samples: np.ndarray
    diagnostics: dict

    @property
    def n_traj(self) -> int:
        return self.samples.shape[0]


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` (PCG64 from ``(seed, index)``)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _norm2(psi: np.ndarray) -> float:
    return float(np.vdot(psi, psi).real)


def _locate_jump(solver: DormandPrince, u: float, tol: float = JUMP_NORM_TOL):
    """Bisection for ``||psi(t)||^2 = u`` inside the last step."""
    lo, hi = solver.t_prev, solver.t
    psi_hi = solver.y
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        psi = solver.dense(mid)
        val = _norm2(psi) - u
        if abs(val) < tol:
            return mid, psi
        if val > 0:
            lo = mid
        else:
            hi, psi_hi = mid, psi
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    return hi, psi_hi


def _band_matrix(bands, dims, k):
    """Sparse matrix of banded term ``k`` (see ``FockSystem.mode_bands``)."""
    out = sp.csr_matrix((math.prod(dims),) * 2)
    for j, d in enumerate(dims):
        single = sum(sp.diags(bands[j, k, o, :d - abs(off)] if off > 0 else
                              bands[j, k, o, -off:d], off)
                     for o, off in enumerate(FockSystem.BAND_OFFSETS))
        out = out + kron_embed(sp.csr_matrix(single), j, dims)
    return out


def _split_terms(system):
    """Operator tuple for the compiled trajectory kernel.

    Diagonals of all terms, the pump and drive terms as single-mode bands,
    and whatever off-diagonal remainder is left (the couplings) as CSR with
    pointers offset into concatenated arrays.
    """
    terms = system.trajectory_terms()
    bands = system.mode_bands()
    banded = {2: 0, 3: 1}
    diag = np.array([sp.csr_matrix(t).diagonal() for t in terms], dtype=complex)
    indptrs, indices, data, which = [], [], [], []
    offset = 0
    for k, t in enumerate(terms):
        off = sp.csr_matrix(t - sp.diags(sp.csr_matrix(t).diagonal()))
        if k in banded:
            off = off - _band_matrix(bands, system.dims, banded[k])
            off.data[np.abs(off.data) < 1e-12 * max(1.0, np.abs(t.data).max(initial=0.0))] = 0
        off.eliminate_zeros()
        if off.nnz == 0:
            continue
        off.sort_indices()
        indptrs.append(off.indptr.astype(np.int64) + offset)
        indices.append(off.indices.astype(np.int64))
        if np.abs(off.data.imag).max() > 0:
            raise InvalidParameterError("compiled trajectories need real off-diagonal terms")
        data.append(off.data.real.astype(float))
        which.append(k)
        offset += off.nnz
    D = diag.shape[1]
    return (diag,
            np.array(indptrs, dtype=np.int64).reshape(len(indptrs), D + 1),
            np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
            np.concatenate(data) if data else np.zeros(0),
            np.array(which, dtype=np.int64), np.array(system.dims, dtype=np.int64), bands)


class CompiledTrajectorySetup:
    """Kernel inputs for a :class:`~kpoanneal.model.FockSystem`."""

    MAX_JUMPS = 100_000

    def __init__(self, system):
        self.op = _split_terms(system)
        s = system.network.schedule
        self.sched = np.array([s.t_s, s.t_sp, s.t_rd, s.delta_initial, s.pump_exponent,
                               s.drive_exponent, *system.reference_energy_weights])
        ops = system.collapse_operators(0.0)
        D = system.dim
        kinds, index, rates, src, val, diag = [], [], [], [], [], []
        for op, rate in ops:
            M = sp.csr_matrix(op)
            off = M - sp.diags(M.diagonal())
            off.eliminate_zeros()
            rates.append(rate)
            if off.nnz == 0:
                kinds.append(1)
                index.append(len(diag))
                diag.append(np.asarray(M.diagonal(), dtype=complex))
            else:
                counts = np.diff(M.indptr)
                if counts.max() > 1:
                    raise InvalidParameterError("compiled trajectories need jump operators "
                                                "with at most one entry per row")
                rows = np.flatnonzero(counts)
                s_row = np.full(D, -1, dtype=np.int64)
                v_row = np.zeros(D, dtype=complex)
                s_row[rows] = M.indices[M.indptr[rows]]
                v_row[rows] = M.data[M.indptr[rows]]
                kinds.append(0)
                index.append(len(src))
                src.append(s_row)
                val.append(v_row)
        self.chan_kind = np.array(kinds, dtype=np.int64)
        self.chan_index = np.array(index, dtype=np.int64)
        self.chan_rate = np.array(rates, dtype=float)
        self.jump_src = np.array(src, dtype=np.int64).reshape(len(src), D)
        self.jump_val = np.array(val, dtype=complex).reshape(len(val), D)
        self.diag_ops = np.array(diag, dtype=complex).reshape(len(diag), D)
        self.tab_a = np.zeros((7, 6))
        for i, row in enumerate(TABLEAU_A):
            self.tab_a[i, :len(row)] = row

    @staticmethod
    def supports(system) -> bool:
        return (hasattr(system, "trajectory_terms") and hasattr(system, "network")
                and not system.time_dependent_collapse)

    def run(self, psi0, t_grid, stops, rng, rtol, atol):
        states = np.empty((len(t_grid), len(psi0)), dtype=complex)
        jump_t = np.empty(self.MAX_JUMPS)
        jump_c = np.empty(self.MAX_JUMPS, dtype=np.int64)
        n_jumps, n_steps = trajectory_kernel(
            self.op, self.sched, np.asarray(psi0, dtype=complex),
            t_grid, np.asarray(stops, dtype=float), self.chan_kind, self.chan_index,
            self.chan_rate, self.jump_src, self.jump_val, self.diag_ops, rng, rtol, atol,
            TABLEAU_C, self.tab_a, TABLEAU_E, TABLEAU_P, JUMP_NORM_TOL, states, jump_t, jump_c)
        if n_jumps == -1:
            raise NumericalConsistencyError("jump triggered with zero total rate")
        if n_jumps == -2:
            raise NumericalConsistencyError(f"more than {self.MAX_JUMPS} jumps in one trajectory")
        if n_jumps == -3:
            raise StiffnessError("step size underflow in trajectory", float("nan"), 1e-14)
        jumps = [(float(jump_t[i]), int(jump_c[i])) for i in range(n_jumps)]
        return states, jumps, n_steps


_SETUP_CACHE: dict[int, tuple] = {}


def _compiled_setup(system) -> CompiledTrajectorySetup:
    cached = _SETUP_CACHE.get(id(system))
    if cached is None or cached[0] is not system:
        cached = (system, CompiledTrajectorySetup(system))
        _SETUP_CACHE.clear()
        _SETUP_CACHE[id(system)] = cached
    return cached[1]


def run_trajectory(system, psi0: np.ndarray, t_grid: np.ndarray, seed: int, index: int,
                   observe: Callable[[float, np.ndarray], np.ndarray], n_obs: int,
                   rtol: float = RTOL, atol: float = ATOL,
                   breakpoints: Sequence[float] = (), compiled: bool = True) -> TrajectoryRecord:
    """One quantum-jump trajectory with norm-threshold jumps.

    The unnormalized state follows ``dpsi/dt = -i H_eff psi``; when its squared
    norm falls to the uniform draw ``u`` the jump time is located by bisection
    on the dense output and a channel is chosen with weight
    ``rate * ||C psi||^2``. Fock systems run in a compiled loop implementing
    the same algorithm unless ``compiled`` is false.
    """
    rng = trajectory_rng(seed, index)
    t_grid = np.asarray(t_grid, dtype=float)
    if compiled and CompiledTrajectorySetup.supports(system):
        t0, t_end = t_grid[0], t_grid[-1]
        stops = sorted({float(b) for b in breakpoints if t0 < b < t_end} | {float(t_end)})
        states, jumps, n_steps = _compiled_setup(system).run(psi0, t_grid, stops, rng,
                                                             rtol, atol)
        samples = np.array([observe(t, psi) for t, psi in zip(t_grid, states)])
        return TrajectoryRecord(index, samples.reshape(len(t_grid), n_obs), jumps, n_steps)
    u = rng.random()
    psi = np.asarray(psi0, dtype=complex) / math.sqrt(_norm2(psi0))
    samples = np.empty((len(t_grid), n_obs))
    samples[0] = observe(t_grid[0], psi)
    k = 1
    jumps: list[tuple[float, int]] = []

    def fun(t, y):
        return -1j * system.apply_effective(t, y)

    def emit(solver, t_limit):
        nonlocal k
        while k < len(t_grid) and t_grid[k] <= t_limit:
            y = solver.y if t_grid[k] == solver.t else solver.dense(t_grid[k])
            samples[k] = observe(t_grid[k], y / math.sqrt(_norm2(y)))
            k += 1

    t, t_end = t_grid[0], t_grid[-1]
    stops = sorted({float(b) for b in breakpoints if t < b < t_end} | {float(t_end)})
    h = None
    n_steps = 0
    for stop in stops:
        solver = DormandPrince(fun, t, psi, stop, rtol=rtol, atol=atol, h0=h)
        while solver.t < stop:
            solver.step()
            n_steps += 1
            if _norm2(solver.y) <= u:
                t_jump, psi_jump = _locate_jump(solver, u)
                # samples strictly before the jump see the pre-jump state
                while k < len(t_grid) and t_grid[k] < t_jump:
                    y = solver.dense(t_grid[k])
                    samples[k] = observe(t_grid[k], y / math.sqrt(_norm2(y)))
                    k += 1
                channel, psi_new = _apply_jump(system, t_jump, psi_jump, rng)
                jumps.append((t_jump, channel))
                u = rng.random()
                solver.restart(t_jump, psi_new)
                continue
            emit(solver, solver.t)
        h = solver.h
        t, psi = solver.t, solver.y
    return TrajectoryRecord(index, samples, jumps, n_steps)


def _apply_jump(system, t: float, psi: np.ndarray, rng: np.random.Generator):
    ops = system.collapse_operators(t)
    candidates = [op @ psi for op, _ in ops]
    weights = np.array([rate * _norm2(c) for c, (_, rate) in zip(candidates, ops)])
    total = weights.sum()
    if not total > 0:
        raise NumericalConsistencyError(f"jump triggered at t={t:.6g} with zero total rate")
    r = rng.random() * total
    channel = min(int(np.searchsorted(np.cumsum(weights), r, side="right")), len(ops) - 1)
    new = candidates[channel]
    return channel, new / math.sqrt(_norm2(new))


# worker-process context (inherited through fork, never pickled)
_POOL_JOB: dict = {}


def _pool_worker(index: int) -> TrajectoryRecord:
    job = _POOL_JOB
    return run_trajectory(job["system"], job["psi0"], job["t_grid"], job["seed"], index,
                          job["observe"], job["n_obs"], job["rtol"], job["atol"],
                          job["breakpoints"], job["compiled"])


def evolve_trajectories(system, psi0: np.ndarray, n_traj: int, seed: int,
                        t_grid: Sequence[float], rtol: float = RTOL, atol: float = ATOL,
                        breakpoints: Sequence[float] = (),
                        observe: Callable[[float, np.ndarray], dict] | None = None,
                        jobs: int = 1, compiled: bool = True) -> TrajectoryEnsemble:
    """Monte-Carlo wave-function ensemble with per-grid-point means and standard errors.

    Trajectory ``k`` draws from the stream ``(seed, k)``, and results are
    reduced in trajectory order, so the output does not depend on ``jobs``.
    ``observe(t, psi)`` receives the normalized state.
    """
    if n_traj < 1:
        raise InvalidParameterError("n_traj must be >= 1")
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (system.dim,):
        raise InvalidDimensionError(f"psi0 shape {psi0.shape} != ({system.dim},)")
    t_grid = np.asarray(t_grid, dtype=float)
    observe = observe or (lambda t, psi: {})
    names = list(observe(t_grid[0], psi0 / math.sqrt(_norm2(psi0))).keys())

    def observe_vec(t, psi):
        values = observe(t, psi)
        return np.array([values[name] for name in names], dtype=float)

    start = time.perf_counter()
    args = (system, psi0, t_grid, seed)
    if jobs <= 1 or n_traj == 1:
        records = [run_trajectory(*args, k, observe_vec, len(names), rtol, atol, breakpoints,
                                  compiled) for k in range(n_traj)]
    else:
        _POOL_JOB.update(system=system, psi0=psi0, t_grid=t_grid, seed=seed,
                         observe=observe_vec, n_obs=len(names), rtol=rtol, atol=atol,
                         breakpoints=tuple(breakpoints), compiled=compiled)
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
                records = list(pool.map(_pool_worker, range(n_traj), chunksize=4))
        finally:
            _POOL_JOB.clear()
    records.sort(key=lambda r: r.index)
    samples = np.stack([r.samples for r in records])
    mean = samples.mean(axis=0)
    se = (samples.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1
          else np.zeros_like(mean))
    diagnostics = {"wall_time_s": time.perf_counter() - start,
                   "n_steps": int(sum(r.n_steps for r in records)),
                   "n_jumps": int(sum(len(r.jumps) for r in records))}
    return TrajectoryEnsemble(
        times=t_grid, names=names,
        mean={name: mean[:, i] for i, name in enumerate(names)},
        stderr={name: se[:, i] for i, name in enumerate(names)},
        jumps=[r.jumps for r in records], samples=samples, diagnostics=diagnostics)


# ---------------------------------------------------------------- readout

def readout_average(times: Sequence[float], series, window: tuple[float, float]):
    """Trapezoidal time average over ``window``.

    ``series`` is one array or a dict of arrays sampled on ``times``; window
    edges between grid points are filled by linear interpolation.
    """
    times = np.asarray(times, dtype=float)
    lo, hi = float(window[0]), float(window[1])
    span = max(1.0, abs(times[-1]))
    if not (times[0] - 1e-12 * span <= lo < hi <= times[-1] + 1e-12 * span):
        raise InvalidParameterError(
            f"readout window [{lo}, {hi}] outside simulated range [{times[0]}, {times[-1]}]")
    inner = times[(times > lo) & (times < hi)]
    grid = np.concatenate([[lo], inner, [hi]])

    def average(values):
        values = np.asarray(values, dtype=float)
        return float(np.trapezoid(np.interp(grid, times, values), grid) / (hi - lo))

    if isinstance(series, dict):
        return {key: average(values) for key, values in series.items()}
    return average(series)


@dataclass(frozen=True)
class OutcomeTable:
    probabilities: dict[str, float]
    leakage: float = 0.0
    warning: bool = False


def outcome_probabilities(state: np.ndarray, representation: str, alphas=None, dims=None,
                          tail_tol: float | None = READOUT_TAIL_TOL) -> OutcomeTable:
    """Probability of each spin configuration (``"+-..."``).

    Spin states: diagonal of ``rho`` (or ``|psi|^2``) in the sigma-z product
    basis. Fock states: populations of ``P^dag |s><s| P`` at ``alphas``,
    renormalized over the cat subspace; the missing weight is the leakage,
    and leakage above 0.2 sets ``warning``.
    """
    state = np.asarray(state, dtype=complex)
    if representation == "spin":
        n = int(round(math.log2(state.shape[0])))
        if 2**n != state.shape[0]:
            raise InvalidDimensionError(f"spin state dimension {state.shape[0]} is not 2^N")
        pops = np.abs(state)**2 if state.ndim == 1 else np.diagonal(state).real
        pops = pops / pops.sum()
        return OutcomeTable(dict(zip(config_labels(n), map(float, pops))))
    if representation != "fock":
        raise InvalidParameterError(f"unknown representation {representation!r}")
    if alphas is None or dims is None:
        raise InvalidParameterError("fock outcome probabilities need alphas and dims")
    projected = project_state(state, network_projectors(alphas, dims, tail_tol), dims)
    if state.ndim == 1:
        pops = np.abs(projected)**2 / _norm2(state)
    else:
        pops = np.diagonal(projected).real / np.trace(state).real
    inside = float(pops.sum())
    leak = float(min(1.0, max(0.0, 1.0 - inside)))
    probs = pops / inside
    return OutcomeTable(dict(zip(config_labels(len(dims)), map(float, probs))),
                        leak, leak > LEAKAGE_WARNING)


def quadrature_sign_outcome(psi: np.ndarray, annihilators: Sequence) -> str:
    """Configuration read from the signs of ``<a_j + a_j^dag>`` (ties count as ``+``)."""
    return "".join("+" if np.vdot(psi, (a + a.conj().T) @ psi).real >= 0 else "-"
                   for a in annihilators)


# ---------------------------------------------------------------- observers

class SpinObserver:
    """Observables of spin-model states at amplitudes ``alpha_of_t(t)``."""

    def __init__(self, n_kpos: int, alpha_of_t):
        from .fock_ops import kron_embed
        from .spin_projection import SIGMA_X, SIGMA_Z
        self.alpha_of_t = alpha_of_t
        self.labels = config_labels(n_kpos)
        dims = [2] * n_kpos
        self.sx = [kron_embed(SIGMA_X, j, dims) for j in range(n_kpos)]
        self.sz = [np.diagonal(kron_embed(SIGMA_Z, j, dims)).real for j in range(n_kpos)]

    def __call__(self, t: float, state: np.ndarray) -> dict:
        c_mp, c_pm, c_x, c_id = spin_coefficients(np.asarray(self.alpha_of_t(t), dtype=float))
        if state.ndim == 1:
            pops = np.abs(state)**2
            exp_sx = [np.vdot(state, s @ state).real for s in self.sx]
        else:
            pops = np.diagonal(state).real
            exp_sx = [np.sum(s * state.T).real for s in self.sx]
        out = {}
        for j, sz in enumerate(self.sz):
            exp_sz = float(pops @ sz)
            out[f"n_{j}"] = float(c_x[j] * exp_sx[j] + c_id[j] * pops.sum())
            out[f"x_{j}"] = float((c_mp[j] + c_pm[j]) * exp_sz)
            out[f"sz_{j}"] = exp_sz
        for label, p in zip(self.labels, pops):
            out[f"pop_{label}"] = float(p)
        return out


class FockObserver:
    """Observables of Fock-space states; outcome populations use ``alpha_of_t(t)``.

    With ``quadrature_sign`` (pure states only) an indicator ``sign_<config>``
    of the configuration read from the signs of ``<a + a^dag>`` is added.
    """

    def __init__(self, system, alpha_of_t, tail_tol: float | None = READOUT_TAIL_TOL,
                 quadrature_sign: bool = False):
        self.system = system
        self.alpha_of_t = alpha_of_t
        self.tail_tol = tail_tol
        self.quadrature_sign = quadrature_sign
        self.labels = config_labels(len(system.dims))
        self.numbers = [np.asarray(n.diagonal()).real for n in system.numbers]
        self.quadratures = [(a + a.conj().T).tocsr() for a in system.annihilators]
        self._cache: dict[tuple, list] = {}

    def _projectors(self, t):
        # trajectories revisit the same grid times, so keep one entry per amplitude set
        alphas = tuple(float(a) for a in self.alpha_of_t(t))
        if alphas not in self._cache:
            self._cache[alphas] = network_projectors(alphas, self.system.dims, self.tail_tol)
        return self._cache[alphas]

    def __call__(self, t: float, state: np.ndarray) -> dict:
        out = {}
        if state.ndim == 1:
            probs = np.abs(state)**2
            xs = [np.vdot(state, q @ state).real for q in self.quadratures]
        else:
            probs = np.diagonal(state).real
            xs = [(q.multiply(state.T)).sum().real for q in self.quadratures]
        for j, n in enumerate(self.numbers):
            out[f"n_{j}"] = float(probs @ n)
            out[f"x_{j}"] = float(xs[j])
        projected = project_state(state, self._projectors(t), self.system.dims)
        pops = np.abs(projected)**2 if state.ndim == 1 else np.diagonal(projected).real
        for label, p in zip(self.labels, pops):
            out[f"pop_{label}"] = float(p)
        out["leakage"] = float(1.0 - pops.sum())
        if self.quadrature_sign and state.ndim == 1:
            sign = "".join("+" if x >= 0 else "-" for x in xs)
            for label in self.labels:
                out[f"sign_{label}"] = float(label == sign)
        return out


# ---------------------------------------------------------------- results

@dataclass
class SimulationResult:
    """Time series, readout-averaged and final outcome tables, and metadata.

    ``series`` maps observable names to arrays on ``times``; ensemble runs
    add ``<name>__se`` standard-error columns.
    """

    times: np.ndarray
    series: dict[str, np.ndarray]
    outcome_probabilities: dict[str, float]
    final_probabilities: dict[str, float]
    metadata: dict = field(default_factory=dict)

    @property
    def leakage(self) -> np.ndarray | None:
        return self.series.get("leakage")

    def most_likely(self) -> tuple[str, bool]:
        """Most likely configuration (lexicographically smallest among ties) and a tie flag."""
        return most_likely(self.outcome_probabilities)

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".npz":
            np.savez(path, times=self.times, header=json.dumps(self._header()),
                     **{f"s:{k}": v for k, v in self.series.items()})
            return
        names = list(self.series)
        with open(path, "w") as fh:
            for key, value in self._header().items():
                fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
            fh.write(",".join(["t_us"] + names) + "\n")
            for i, t in enumerate(self.times):
                row = [repr(float(t))] + [repr(float(self.series[n][i])) for n in names]
                fh.write(",".join(row) + "\n")

    def _header(self) -> dict:
        return {"format": "kpoanneal-result-1", "metadata": self.metadata,
                "outcome_probabilities": self.outcome_probabilities,
                "final_probabilities": self.final_probabilities}

    @classmethod
    def load(cls, path) -> "SimulationResult":
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as data:
                header = json.loads(str(data["header"]))
                series = {k[2:]: data[k] for k in data.files if k.startswith("s:")}
                times = data["times"]
        else:
            header = {}
            with open(path) as fh:
                lines = fh.read().splitlines()
            body = []
            for line in lines:
                if line.startswith("# "):
                    key, _, value = line[2:].partition(": ")
                    header[key] = json.loads(value)
                elif line:
                    body.append(line)
            names = body[0].split(",")
            data = np.array([[float(x) for x in row.split(",")] for row in body[1:]])
            data = data.reshape(-1, len(names))
            times = data[:, 0]
            series = {n: data[:, i] for i, n in enumerate(names) if i > 0}
        if header.get("format") != "kpoanneal-result-1":
            raise InvalidParameterError(f"{path}: not a kpoanneal result file")
        return cls(times, series, header["outcome_probabilities"],
                   header["final_probabilities"], header["metadata"])


def most_likely(probabilities: dict[str, float], tie_tol: float = 1e-12) -> tuple[str, bool]:
    top = max(probabilities.values())
    tied = sorted(k for k, v in probabilities.items() if v >= top - tie_tol)
    return tied[0], len(tied) > 1


def outcome_table_from_series(times, series: dict, window, labels: Sequence[str],
                              prefix: str = "pop_") -> tuple[dict, dict, float]:
    """Readout-averaged and final outcome tables from population series.

    Populations are renormalized by the (averaged) cat-subspace weight.
    Returns ``(averaged, final, averaged_leakage)``.
    """
    pops = {label: series[prefix + label] for label in labels}
    avg = readout_average(times, pops, window)
    total = sum(avg.values())
    final = {label: float(values[-1]) for label, values in pops.items()}
    final_total = sum(final.values())
    return ({k: v / total for k, v in avg.items()},
            {k: v / final_total for k, v in final.items()},
            float(1.0 - total))
