"""Experiment orchestration: single runs, resumable sweeps, spin-vs-Fock
comparisons, transition estimates and figure tables."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import multiprocessing
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .alpha import AlphaTrajectory, build_alpha_trajectory, schedule_grid
from .config import (METHODS, SimulationSettings, SweepSpec, get_path, load_config,
                     load_network, network_from_config, network_to_config,
                     resolve_config_path, simulation_from_config, sweep_from_config)
from .errors import ConfigError, InvalidParameterError, KpoError
from .fock_ops import default_n_max
from .model import TWO_PI, FockSystem, NetworkSpec, SpinSystem, config_labels, schedule_value
from .solvers import (FockObserver, SimulationResult, SpinObserver, density_matrix,
                      evolve_master, evolve_trajectories, most_likely,
                      outcome_table_from_series, readout_average)

logger = logging.getLogger(__name__)

RESULT_VERSION = 1
MIN_SLICE_POINTS = 4
DRIVE_EXPONENT_PATH = "schedule.drive_exponent"


# ---------------------------------------------------------------- single runs

def initial_state(method: str, network: NetworkSpec, dims: Sequence[int] | None = None):
    """Vacuum in Fock space, ``|+x>`` on every site for the spin model.

    The vacuum is the zero-amplitude limit of the even cat, which the spin
    encoding maps to the sigma-x eigenstate ``|+>``.
    """
    if method == "spin":
        plus = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2)
        psi = np.array([1.0], dtype=complex)
        for _ in range(network.n_kpos):
            psi = np.kron(psi, plus)
        return psi
    psi = np.zeros(math.prod(dims), dtype=complex)
    psi[0] = 1.0
    return psi


def fock_dims(network: NetworkSpec, settings: SimulationSettings,
              alpha: AlphaTrajectory) -> tuple[int, ...]:
    """Configured truncation, else the truncation rule at each KPO's largest amplitude."""
    if settings.fock_dims is not None:
        if len(settings.fock_dims) != network.n_kpos:
            raise InvalidParameterError(
                f"{len(settings.fock_dims)} Fock dims for {network.n_kpos} KPOs")
        return tuple(settings.fock_dims)
    return tuple(default_n_max(float(a)) + 1 for a in alpha.alphas.max(axis=0))


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _trajectory_outcome_stderr(ensemble, window, labels) -> dict[str, float]:
    """Standard errors of the renormalized readout probabilities (ratio estimator)."""
    idx = [ensemble.names.index(f"pop_{label}") for label in labels]
    per_traj = np.array([[readout_average(ensemble.times, sample[:, i], window) for i in idx]
                         for sample in ensemble.samples])
    inside = per_traj.sum(axis=1)
    probs = per_traj.mean(axis=0) / inside.mean()
    n = len(per_traj)
    if n < 2:
        return {label: 0.0 for label in labels}
    resid = per_traj - probs[None, :] * inside[:, None]
    se = resid.std(axis=0, ddof=1) / math.sqrt(n) / inside.mean()
    return dict(zip(labels, map(float, se)))


def _sign_outcomes(ensemble, window, labels) -> dict[str, float]:
    avg = readout_average(ensemble.times,
                          {label: ensemble.mean[f"sign_{label}"] for label in labels}, window)
    total = sum(avg.values())
    return {k: v / total for k, v in avg.items()} if total > 0 else avg


def simulate(network: NetworkSpec, method: str, settings: SimulationSettings | None = None,
             alpha: AlphaTrajectory | None = None) -> SimulationResult:
    """Run the whole schedule with one method and extract the readout tables.

    ``method`` is ``spin`` (spin-model master equation), ``fock_master`` or
    ``fock_trajectories``. The projector amplitudes (and the spin-model
    coefficients) come from ``alpha``, built with ``settings.alpha_method``
    when not given.
    """
    if method not in METHODS:
        raise InvalidParameterError(f"unknown method {method!r}; expected one of {METHODS}")
    settings = settings or SimulationSettings()
    start = time.perf_counter()
    grid = schedule_grid(network)
    sched = network.schedule
    if alpha is None:
        alpha = build_alpha_trajectory(network, grid, settings.alpha_method)
    labels = config_labels(network.n_kpos)
    window = sched.readout_window
    meta = {"method": method, "seed": settings.seed, "alpha_method": alpha.method,
            "rtol": settings.rtol, "atol": settings.atol, "readout_window_us": list(window),
            "network": network_to_config(network), "result_version": RESULT_VERSION}
    if method == "spin":
        system = SpinSystem(network, alpha)
        rho0 = density_matrix(initial_state(method, network))
        sol = evolve_master(system, rho0, grid, settings.rtol, settings.atol,
                            sched.breakpoints, observe=SpinObserver(network.n_kpos, alpha),
                            store=False)
        series, diagnostics = sol.series, sol.diagnostics
    else:
        dims = fock_dims(network, settings, alpha)
        system = FockSystem(network, dims)
        psi0 = initial_state(method, network, dims)
        meta["fock_dims"] = list(dims)
        if method == "fock_master":
            observer = FockObserver(system, alpha)
            sol = evolve_master(system, density_matrix(psi0), grid, settings.rtol,
                                settings.atol, sched.breakpoints, observe=observer,
                                store=False, eig_every=10)
            series, diagnostics = sol.series, sol.diagnostics
        else:
            rtol, atol = settings.trajectory_tolerances
            meta.update(rtol=rtol, atol=atol, n_traj=settings.n_traj)
            observer = FockObserver(system, alpha, quadrature_sign=True)
            ens = evolve_trajectories(system, psi0, settings.n_traj, settings.seed, grid,
                                      rtol, atol, sched.breakpoints, observe=observer,
                                      jobs=settings.jobs)
            series = {k: v for k, v in ens.mean.items() if not k.startswith("sign_")}
            series.update({f"{k}__se": v for k, v in ens.stderr.items()
                           if not k.startswith("sign_")})
            diagnostics = ens.diagnostics
            meta["outcome_stderr"] = _trajectory_outcome_stderr(ens, window, labels)
            meta["sign_outcome_probabilities"] = _sign_outcomes(ens, window, labels)
    averaged, final, leak = outcome_table_from_series(grid, series, window, labels)
    if method != "spin":
        meta["mean_readout_leakage"] = leak
        meta["final_leakage"] = float(series["leakage"][-1])
        meta["leakage_warning"] = bool(leak > 0.2)
    meta["diagnostics"] = diagnostics
    meta["wall_time_s"] = time.perf_counter() - start
    state, tie = most_likely(averaged)
    meta.update(most_likely=state, tie=tie)
    return SimulationResult(grid, series, averaged, final, _jsonable(meta))


def run_single(config, method: str, out=None, *, seed: int | None = None,
               n_traj: int | None = None, jobs: int | None = None) -> SimulationResult:
    """Load a config (path or built-in name), run it, optionally write the result."""
    network, settings, tree = load_network(config)
    settings = settings.replace(seed=seed, n_traj=n_traj, jobs=jobs)
    result = simulate(network, method, settings)
    result.metadata["config"] = tree
    if out is not None:
        result.save(out)
    return result


# ---------------------------------------------------------------- sweeps

NUMERIC_MODULES = ("_kernels", "alpha", "fock_ops", "integrate", "model", "solvers",
                   "spin_projection")


def source_hash() -> str:
    """Digest of the modules that determine simulation output.

    Cached sweep results are keyed on it, so editing front-end code (CLI,
    reporting) keeps them valid while any numerical change invalidates them.
    """
    digest = hashlib.sha256()
    for path in (Path(__file__).parent / f"{name}.py" for name in NUMERIC_MODULES):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def _point_settings(sweep: SweepSpec, tree: dict, n_kpos: int, jobs: int) -> SimulationSettings:
    settings = simulation_from_config(tree, n_kpos)
    return settings.replace(n_traj=sweep.n_traj, seed=sweep.seed, jobs=jobs)


def _cache_key(tree: dict, method: str, settings: SimulationSettings, src: str) -> str:
    blob = {"config": tree, "method": method, "n_traj": settings.n_traj, "seed": settings.seed,
            "source": src}
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:20]


def _run_point(job: dict) -> tuple[int, str, SimulationResult | None, str | None]:
    index, method, tree = job["index"], job["method"], job["tree"]
    try:
        network = network_from_config(tree)
        settings = SimulationSettings(**job["settings"])
        result = simulate(network, method, settings)
        result.metadata.update(config=tree, cache_key=job["key"], point=job["values"])
        result.save(job["path"])
        return index, method, result, None
    except Exception as err:  # a failed point must not abort the sweep
        logger.warning("sweep point %d (%s) failed: %s", index, method, err)
        return index, method, None, f"{type(err).__name__}: {err}\n{traceback.format_exc()}"


@dataclass
class SweepOutcome:
    sweep: SweepSpec
    points: list[dict[str, float]]
    results: dict[tuple[int, str], SimulationResult]
    failures: dict[tuple[int, str], str]
    report: "ComparisonReport"

    @property
    def ok(self) -> bool:
        return not self.failures


def run_sweep(sweep, out_dir, jobs: int = 1, resume: bool = True, methods=None) -> SweepOutcome:
    """Run every (grid point, method) job, reusing cached results when valid.

    Results go to ``out_dir/points``; ``sweep.json`` indexes them and
    ``report.json`` holds the :class:`ComparisonReport`. Cached files are
    reused only if their key (point config, method, seed, trajectory count,
    package source digest) matches. Spin and master-equation points are
    spread over ``jobs`` processes; trajectory ensembles use the workers
    internally instead. All seeds are fixed, so results do not depend on
    ``jobs``.
    """
    if not isinstance(sweep, SweepSpec):
        path = resolve_config_path(sweep)
        sweep = sweep_from_config(load_config(path), path.parent)
    methods = tuple(methods) if methods else sweep.methods
    out_dir = Path(out_dir)
    (out_dir / "points").mkdir(parents=True, exist_ok=True)
    src = source_hash()
    points = sweep.points()
    results: dict[tuple[int, str], SimulationResult] = {}
    failures: dict[tuple[int, str], str] = {}
    pending_pool, pending_serial = [], []
    for index, values in enumerate(points):
        tree = sweep.config_at(values)
        try:
            network = network_from_config(tree)
        except ConfigError as err:
            for method in methods:
                failures[(index, method)] = str(err)
            continue
        for method in methods:
            settings = _point_settings(sweep, tree, network.n_kpos,
                                       jobs if method == "fock_trajectories" else 1)
            key = _cache_key(tree, method, settings, src)
            path = out_dir / "points" / f"p{index:04d}_{method}.csv"
            if resume and path.exists():
                try:
                    cached = SimulationResult.load(path)
                except (KpoError, ValueError, OSError):
                    cached = None
                if cached is not None and cached.metadata.get("cache_key") == key:
                    results[(index, method)] = cached
                    continue
            job = {"index": index, "method": method, "tree": tree, "key": key,
                   "values": values, "path": str(path),
                   "settings": {k: getattr(settings, k) for k in
                                SimulationSettings.__dataclass_fields__}}
            (pending_serial if method == "fock_trajectories" or jobs <= 1
             else pending_pool).append(job)
    done = [_run_point(job) for job in pending_serial]
    if pending_pool:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            done += list(pool.map(_run_point, pending_pool))
    for index, method, result, error in done:
        if error is None:
            results[(index, method)] = result
        else:
            failures[(index, method)] = error
    report = build_report(sweep, points, results)
    _write_index(out_dir, sweep, points, methods, results, failures)
    report.save(out_dir / "report.json")
    return SweepOutcome(sweep, points, results, failures, report)


def _write_index(out_dir: Path, sweep: SweepSpec, points, methods, results, failures):
    index = {"name": sweep.name, "axes": [[p, list(v)] for p, v in sweep.axes],
             "methods": list(methods), "points": []}
    for i, values in enumerate(points):
        entry = {"index": i, "values": values, "results": {}, "errors": {}}
        for method in methods:
            if (i, method) in results:
                entry["results"][method] = f"points/p{i:04d}_{method}.csv"
            if (i, method) in failures:
                entry["errors"][method] = failures[(i, method)].splitlines()[0]
        index["points"].append(entry)
    (out_dir / "sweep.json").write_text(json.dumps(index, indent=1, sort_keys=True))


def load_sweep_results(out_dir) -> tuple[list[dict], dict[tuple[int, str], SimulationResult]]:
    """Points and results of a finished sweep directory."""
    out_dir = Path(out_dir)
    try:
        index = json.loads((out_dir / "sweep.json").read_text())
    except OSError as err:
        raise InvalidParameterError(f"{out_dir}: no sweep index (sweep.json)") from err
    points = [entry["values"] for entry in index["points"]]
    results = {}
    for entry in index["points"]:
        for method, rel in entry["results"].items():
            results[(entry["index"], method)] = SimulationResult.load(out_dir / rel)
    return points, results


# ---------------------------------------------------------------- comparison

@dataclass
class TransitionEstimate:
    """Zero crossing of ``P(state_a) - P(state_b)`` along a slice.

    ``location`` is ``None`` when the slice shows no crossing (the
    no-transition marker). ``stderr`` propagates the Monte-Carlo errors of
    the two bracketing points (``None`` for deterministic runs).
    """

    location: float | None
    state_a: str
    state_b: str
    bracket: tuple[float, float] | None = None
    stderr: float | None = None

    @property
    def found(self) -> bool:
        return self.location is not None

    def to_dict(self) -> dict:
        return {"location": self.location, "state_a": self.state_a, "state_b": self.state_b,
                "bracket": list(self.bracket) if self.bracket else None, "stderr": self.stderr}


def estimate_transition(xs: Sequence[float], tables: Sequence[dict[str, float]],
                        state_a: str | None = None, state_b: str | None = None,
                        stderrs: Sequence[dict[str, float]] | None = None) -> TransitionEstimate:
    """Linear interpolation of the first sign change of ``P_a - P_b``.

    Without explicit states, ``state_a``/``state_b`` are the most likely
    configurations at the two ends of the slice.
    """
    if len(xs) != len(tables):
        raise InvalidParameterError("xs and tables differ in length")
    if len(xs) < MIN_SLICE_POINTS:
        raise InvalidParameterError(
            f"a transition estimate needs at least {MIN_SLICE_POINTS} points, got {len(xs)}")
    order = np.argsort(xs, kind="stable")
    xs = np.asarray(xs, dtype=float)[order]
    tables = [tables[i] for i in order]
    ses = [stderrs[i] for i in order] if stderrs is not None else None
    a = state_a or most_likely(tables[0])[0]
    b = state_b or most_likely(tables[-1])[0]
    if a == b:
        return TransitionEstimate(None, a, b)
    d = np.array([t.get(a, 0.0) - t.get(b, 0.0) for t in tables])
    for i in range(len(xs) - 1):
        d1, d2 = d[i], d[i + 1]
        if d1 == 0.0 and d2 == 0.0:
            continue
        if d1 * d2 <= 0.0:
            width = xs[i + 1] - xs[i]
            loc = xs[i] + d1 * width / (d1 - d2)
            err = None
            if ses is not None:
                # the two probability errors are correlated; their sum bounds the difference's
                s1 = ses[i].get(a, 0.0) + ses[i].get(b, 0.0)
                s2 = ses[i + 1].get(a, 0.0) + ses[i + 1].get(b, 0.0)
                g1 = -width * d2 / (d1 - d2) ** 2
                g2 = width * d1 / (d1 - d2) ** 2
                err = float(math.hypot(g1 * s1, g2 * s2))
            return TransitionEstimate(float(loc), a, b, (float(xs[i]), float(xs[i + 1])), err)
    return TransitionEstimate(None, a, b)


@dataclass
class PointComparison:
    index: int
    values: dict[str, float]
    config: dict
    tables: dict[str, dict[str, float]]
    stderrs: dict[str, dict[str, float]]
    most_likely: dict[str, tuple[str, bool]]
    leakage: dict[str, float]

    @property
    def agreement(self) -> bool | None:
        """Whether all methods share the most likely state (``None`` with fewer than two)."""
        states = {state for state, _ in self.most_likely.values()}
        return None if len(self.most_likely) < 2 else len(states) == 1

    def to_dict(self) -> dict:
        return {"index": self.index, "values": self.values, "tables": self.tables,
                "stderrs": self.stderrs,
                "most_likely": {m: list(v) for m, v in self.most_likely.items()},
                "agreement": self.agreement, "leakage": self.leakage}


@dataclass
class ComparisonReport:
    """Outcome tables per point and method, argmax agreement and slice transitions.

    Slices run along the first sweep axis with every other axis held fixed.
    """

    axes: list[str]
    points: list[PointComparison]
    transitions: list[dict] = field(default_factory=list)

    def heatmap(self) -> list[dict]:
        """Most likely state per point and method."""
        return [{**p.values, "method": m, "state": s, "tie": t}
                for p in self.points for m, (s, t) in sorted(p.most_likely.items())]

    def leakage_summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for method in sorted({m for p in self.points for m in p.leakage}):
            vals = [p.leakage[method] for p in self.points if method in p.leakage]
            out[method] = {"mean": float(np.mean(vals)), "max": float(np.max(vals))}
        return out

    def transition(self, method: str, fixed: dict[str, float] | None = None) -> TransitionEstimate:
        for entry in self.transitions:
            if entry["method"] == method and (fixed is None or entry["fixed"] == fixed):
                e = entry["estimate"]
                return TransitionEstimate(e["location"], e["state_a"], e["state_b"],
                                          tuple(e["bracket"]) if e["bracket"] else None,
                                          e["stderr"])
        raise KeyError(f"no transition for method {method!r} at {fixed}")

    def to_dict(self) -> dict:
        return {"axes": self.axes, "points": [p.to_dict() for p in self.points],
                "transitions": self.transitions, "heatmap": self.heatmap(),
                "leakage": self.leakage_summary()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(_jsonable(self.to_dict()), indent=1, sort_keys=True))


def _slices(axes: list[str], points: list[PointComparison]):
    groups: dict[tuple, list[PointComparison]] = {}
    for p in points:
        fixed = tuple((name, p.values[name]) for name in axes[1:])
        groups.setdefault(fixed, []).append(p)
    return groups


def build_report(sweep: SweepSpec | None, points, results, axes=None) -> ComparisonReport:
    """Report over ``results[(point index, method)]``.

    Several sweeps over the same axes can be combined by passing their
    merged results with points aligned (see :func:`merge_sweeps`).
    """
    axes = axes or [path for path, _ in sweep.axes]
    comps = []
    for index, values in enumerate(points):
        tables, ses, ml, leak = {}, {}, {}, {}
        config = None
        for (i, method), res in sorted(results.items()):
            if i != index:
                continue
            tables[method] = res.outcome_probabilities
            ses[method] = res.metadata.get("outcome_stderr", {})
            ml[method] = tuple(res.most_likely())
            if "mean_readout_leakage" in res.metadata:
                leak[method] = res.metadata["mean_readout_leakage"]
            config = res.metadata.get("config", config)
        if tables:
            comps.append(PointComparison(index, dict(values), config or {}, tables, ses, ml,
                                         leak))
    report = ComparisonReport(list(axes), comps)
    for fixed, members in sorted(_slices(report.axes, comps).items()):
        methods = sorted({m for p in members for m in p.tables})
        for method in methods:
            sub = [p for p in members if method in p.tables]
            if len(sub) < MIN_SLICE_POINTS:
                continue
            xs = [p.values[report.axes[0]] for p in sub]
            has_se = any(p.stderrs.get(method) for p in sub)
            est = estimate_transition(xs, [p.tables[method] for p in sub],
                                      stderrs=[p.stderrs.get(method, {}) for p in sub]
                                      if has_se else None)
            report.transitions.append({"method": method, "fixed": dict(fixed),
                                       "estimate": est.to_dict()})
    return report


def merge_sweeps(dirs: Sequence) -> ComparisonReport:
    """One report over several sweep directories sharing the same axes.

    Points are matched by their axis values, so a coarse Fock sweep and a
    fine spin sweep over the same slice line up where they overlap.
    """
    all_points: list[dict] = []
    merged: dict[tuple[int, str], SimulationResult] = {}
    axes = None
    for d in dirs:
        index = json.loads((Path(d) / "sweep.json").read_text())
        names = [a[0] for a in index["axes"]]
        if axes is None:
            axes = names
        elif names != axes:
            raise InvalidParameterError(f"{d}: axes {names} differ from {axes}")
        points, results = load_sweep_results(d)
        for (i, method), res in results.items():
            key = points[i]
            if key not in all_points:
                all_points.append(key)
            merged[(all_points.index(key), method)] = res
    order = sorted(range(len(all_points)),
                   key=lambda i: tuple(all_points[i][a] for a in reversed(axes)))
    remap = {old: new for new, old in enumerate(order)}
    points = [all_points[i] for i in order]
    results = {(remap[i], m): r for (i, m), r in merged.items()}
    return build_report(None, points, results, axes=axes)


# ---------------------------------------------------------------- figure tables

FIGURES = ("fig2", "fig3", "fig4", "fig5", "alpha")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_table(path, columns: list[str], rows: list[list]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def load_table(path) -> list[dict]:
    """Rows of an emitted table; numeric cells come back as floats."""
    def parse(cell: str):
        try:
            return float(cell)
        except ValueError:
            return {"true": True, "false": False}.get(cell, cell)

    with open(path, newline="") as fh:
        return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _param(config: dict, path: str):
    try:
        return float(get_path(config, path))
    except ConfigError:
        return float("nan")


def emit_figure_data(figure: str, out_path, report: ComparisonReport | None = None,
                     network: NetworkSpec | None = None, alpha: AlphaTrajectory | None = None,
                     n_points: int = 281) -> Path:
    """Write the tidy CSV for ``figure`` (one of :data:`FIGURES`).

    ``fig2``: most likely state over both drives and f. ``fig3``/``fig4``:
    probability of every configuration along the slice. ``fig5``: schedule
    traces. ``alpha``: amplitude trajectory.
    """
    if figure not in FIGURES:
        raise InvalidParameterError(f"unknown figure {figure!r}; expected one of {FIGURES}")
    if figure in ("fig2", "fig3", "fig4") and report is None:
        raise InvalidParameterError(f"{figure} needs sweep results (a comparison report)")
    if figure == "fig5" and network is None:
        raise InvalidParameterError("fig5 needs a network config")
    if figure == "alpha" and alpha is None:
        raise InvalidParameterError("alpha needs an amplitude trajectory (or a network config)")
    if figure == "fig2":
        rows = []
        for p in report.points:
            for method, (state, tie) in sorted(p.most_likely.items()):
                rows.append([_param(p.config, "kpos[0].drive_rescaled_mhz"),
                             _param(p.config, "kpos[1].drive_rescaled_mhz"),
                             _param(p.config, DRIVE_EXPONENT_PATH), method, state, tie])
        rows.sort(key=lambda r: (r[3], r[2], r[0], r[1]))
        return _write_table(out_path, ["omega0_mhz", "omega1_mhz", "f", "method",
                                       "most_likely_state", "tie"], rows)
    if figure in ("fig3", "fig4"):
        rows = []
        sweep_axis = report.axes[0]
        for p in report.points:
            f = _param(p.config, DRIVE_EXPONENT_PATH)
            for method, table in sorted(p.tables.items()):
                se = p.stderrs.get(method, {})
                for config, prob in sorted(table.items()):
                    rows.append([float(p.values[sweep_axis]), f, method, config, float(prob),
                                 float(se.get(config, 0.0))])
        rows.sort(key=lambda r: (r[2], r[1], r[0], r[3]))
        return _write_table(out_path, ["sweep_value", "f", "method", "config", "probability",
                                       "stderr"], rows)
    if figure == "fig5":
        sched = network.schedule
        ts = np.unique(np.concatenate([np.linspace(0.0, sched.t_end, n_points),
                                       sched.breakpoints]))
        rows = [[float(t), float(schedule_value(sched, "delta", t) / TWO_PI),
                 float(schedule_value(sched, "pump_fraction", t)),
                 float(schedule_value(sched, "drive_fraction", t))] for t in ts]
        return _write_table(out_path, ["t_us", "detuning_mhz", "pump_fraction",
                                       "drive_fraction"], rows)
    rows = [[float(t)] + [float(a) for a in row] + [alpha.method]
            for t, row in zip(alpha.times, alpha.alphas)]
    return _write_table(out_path, ["t_us"] + [f"alpha_{j}" for j in range(alpha.n_kpos)]
                        + ["method"], rows)
