"""JSON configuration files for networks, simulation settings and sweeps.

Frequencies in files are ``value / 2pi`` (MHz, dephasing in kHz) and times
are in microseconds, matching how the experiment parameters are usually
quoted. Every validation error names the key path that caused it, e.g.
``kpos[1].pump_mhz``.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError, InvalidParameterError
from .model import (TWO_PI, CouplingSpec, KpoSpec, NetworkSpec, ScheduleSpec, khz, mhz)

METHODS = ("spin", "fock_master", "fock_trajectories")
ALPHA_METHODS = ("variational", "analytic")

_PATH_TOKEN = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)|\[(\d+)\]")


# ---------------------------------------------------------------- paths

def parse_path(path: str) -> list:
    """``"kpos[1].pump_mhz"`` -> ``["kpos", 1, "pump_mhz"]``."""
    keys = []
    pos = 0
    for part in path.split("."):
        if not part:
            raise ConfigError("empty path component", path)
        pos = 0
        for m in _PATH_TOKEN.finditer(part):
            if m.start() != pos:
                raise ConfigError("malformed key path", path)
            keys.append(m.group(1) if m.group(1) is not None else int(m.group(2)))
            pos = m.end()
        if pos != len(part):
            raise ConfigError("malformed key path", path)
    return keys


def format_path(keys) -> str:
    out = ""
    for k in keys:
        out += f"[{k}]" if isinstance(k, int) else (f".{k}" if out else k)
    return out


def get_path(tree, path: str):
    node = tree
    for i, key in enumerate(parse_path(path)):
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError):
            raise ConfigError("key not found", format_path(parse_path(path)[:i + 1])) from None
    return node


def set_path(tree, path: str, value):
    """Copy of ``tree`` with ``path`` set to ``value`` (the key must exist)."""
    keys = parse_path(path)
    out = copy.deepcopy(tree)
    node = out
    for i, key in enumerate(keys[:-1]):
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError):
            raise ConfigError("key not found", format_path(keys[:i + 1])) from None
    last = keys[-1]
    if isinstance(last, int):
        if not isinstance(node, list) or last >= len(node):
            raise ConfigError("index out of range", format_path(keys))
    elif not isinstance(node, dict):
        raise ConfigError("not a mapping", format_path(keys[:-1]))
    node[last] = value
    return out


# ---------------------------------------------------------------- field readers

def _number(tree: dict, key: str, where: str, default=None, required: bool = True):
    path = f"{where}.{key}" if where else key
    if key not in tree:
        if default is not None or not required:
            return default
        raise ConfigError("missing required key", path)
    value = tree[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {value!r}", path)
    return float(value)


def _integer(tree: dict, key: str, where: str, default=None):
    path = f"{where}.{key}" if where else key
    if key not in tree:
        if default is not None:
            return default
        raise ConfigError("missing required key", path)
    value = tree[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", path)
    return value


def _mapping(tree, key: str, where: str = "", required: bool = True) -> dict:
    path = f"{where}.{key}" if where else key
    if key not in tree:
        if required:
            raise ConfigError("missing required key", path)
        return {}
    value = tree[key]
    if not isinstance(value, dict):
        raise ConfigError("expected a mapping", path)
    return value


def _list(tree, key: str, required: bool = True) -> list:
    if key not in tree:
        if required:
            raise ConfigError("missing required key", key)
        return []
    value = tree[key]
    if not isinstance(value, list):
        raise ConfigError("expected a list", key)
    return value


def _check_keys(tree: dict, allowed, where: str):
    for key in tree:
        if key not in allowed:
            raise ConfigError("unknown key", f"{where}.{key}" if where else key)


# ---------------------------------------------------------------- network

KPO_KEYS = ("kerr_mhz", "pump_mhz", "drive_rescaled_mhz", "kappa_mhz")
COUPLING_KEYS = ("kind", "sites", "g_mhz")
SCHEDULE_KEYS = ("t_s_us", "t_sp_us", "t_rd_us", "t_r_us", "delta0_mhz", "pump_exponent",
                 "drive_exponent", "grid_points")
TOP_KEYS = ("name", "description", "kpos", "couplings", "gamma_khz", "schedule", "simulation")


def network_from_config(tree: dict) -> NetworkSpec:
    """Validate a config tree and build the :class:`NetworkSpec`."""
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(tree, TOP_KEYS, "")
    kpo_list = _list(tree, "kpos")
    if not kpo_list:
        raise ConfigError("at least one KPO is required", "kpos")
    kpos = []
    for i, entry in enumerate(kpo_list):
        where = f"kpos[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError("expected a mapping", where)
        _check_keys(entry, KPO_KEYS, where)
        values = dict(
            kerr=mhz(_number(entry, "kerr_mhz", where)),
            pump_final=mhz(_number(entry, "pump_mhz", where)),
            drive_final_rescaled=mhz(_number(entry, "drive_rescaled_mhz", where, 0.0)),
            photon_loss=mhz(_number(entry, "kappa_mhz", where, 0.0)))
        kpos.append(_build(KpoSpec, values, where, {
            "kerr": "kerr_mhz", "pump_final": "pump_mhz", "photon_loss": "kappa_mhz"}))
    couplings = []
    for i, entry in enumerate(_list(tree, "couplings", required=False)):
        where = f"couplings[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError("expected a mapping", where)
        _check_keys(entry, COUPLING_KEYS, where)
        if "kind" not in entry:
            raise ConfigError("missing required key", f"{where}.kind")
        sites = entry.get("sites")
        if not isinstance(sites, list) or not all(
                isinstance(s, int) and not isinstance(s, bool) for s in sites):
            raise ConfigError("expected a list of integer KPO indices", f"{where}.sites")
        for s in sites:
            if not 0 <= s < len(kpos):
                raise ConfigError(f"site {s} out of range for {len(kpos)} KPOs", f"{where}.sites")
        couplings.append(_build(CouplingSpec, dict(
            kind=entry["kind"], sites=tuple(sites),
            strength=mhz(_number(entry, "g_mhz", where))), where,
            {"kind": "kind", "sites": "sites"}))
    gamma = _number(tree, "gamma_khz", "", 0.0)
    sched_tree = _mapping(tree, "schedule")
    _check_keys(sched_tree, SCHEDULE_KEYS, "schedule")
    schedule = _build(ScheduleSpec, dict(
        t_s=_number(sched_tree, "t_s_us", "schedule"),
        t_sp=_number(sched_tree, "t_sp_us", "schedule"),
        t_rd=_number(sched_tree, "t_rd_us", "schedule"),
        t_r=_number(sched_tree, "t_r_us", "schedule"),
        delta_initial=mhz(_number(sched_tree, "delta0_mhz", "schedule")),
        pump_exponent=_number(sched_tree, "pump_exponent", "schedule", 2.5),
        drive_exponent=_number(sched_tree, "drive_exponent", "schedule", 1.0),
        grid_points=_integer(sched_tree, "grid_points", "schedule", 200)), "schedule",
        {"t_s": "t_s_us", "t_sp": "t_sp_us", "t_rd": "t_rd_us", "t_r": "t_r_us",
         "delta_initial": "delta0_mhz", "grid_points": "grid_points"})
    if gamma < 0:
        raise ConfigError("must be >= 0", "gamma_khz")
    try:
        return NetworkSpec(tuple(kpos), tuple(couplings), khz(gamma), schedule)
    except InvalidParameterError as err:
        path = "schedule.delta0_mhz" if "delta_initial" in str(err) else ""
        raise ConfigError(str(err), path) from err


def _build(cls, values: dict, where: str, key_of: dict):
    try:
        return cls(**values)
    except InvalidParameterError as err:
        msg = str(err)
        # attribute names in the message, in order, point at the offending key
        for word in re.findall(r"[A-Za-z_]+", msg):
            if word in key_of:
                raise ConfigError(msg, f"{where}.{key_of[word]}") from err
        raise ConfigError(msg, where) from err


def network_to_config(network: NetworkSpec) -> dict:
    """Inverse of :func:`network_from_config` (without the simulation block)."""
    def to_mhz(x):
        return x / TWO_PI

    s = network.schedule
    return {
        "kpos": [{"kerr_mhz": to_mhz(k.kerr), "pump_mhz": to_mhz(k.pump_final),
                  "drive_rescaled_mhz": to_mhz(k.drive_final_rescaled),
                  "kappa_mhz": to_mhz(k.photon_loss)} for k in network.kpos],
        "couplings": [{"kind": c.kind, "sites": list(c.sites), "g_mhz": to_mhz(c.strength)}
                      for c in network.couplings],
        "gamma_khz": network.dephasing / TWO_PI * 1e3,
        "schedule": {"t_s_us": s.t_s, "t_sp_us": s.t_sp, "t_rd_us": s.t_rd, "t_r_us": s.t_r,
                     "delta0_mhz": to_mhz(s.delta_initial), "pump_exponent": s.pump_exponent,
                     "drive_exponent": s.drive_exponent, "grid_points": s.grid_points},
    }


# ---------------------------------------------------------------- simulation settings

@dataclass(frozen=True)
class SimulationSettings:
    """Solver settings; ``fock_dims=None`` means the truncation rule decides."""

    fock_dims: tuple[int, ...] | None = None
    alpha_method: str = "variational"
    n_traj: int = 400
    seed: int = 0
    rtol: float = 1e-8
    atol: float = 1e-10
    jobs: int = 1
    trajectory_rtol: float | None = None
    trajectory_atol: float | None = None

    @property
    def trajectory_tolerances(self) -> tuple[float, float]:
        """``(rtol, atol)`` for trajectory runs (the general ones unless overridden)."""
        return (self.trajectory_rtol or self.rtol, self.trajectory_atol or self.atol)

    def replace(self, **changes) -> "SimulationSettings":
        values = asdict(self)
        values.update({k: v for k, v in changes.items() if v is not None})
        return SimulationSettings(**values)


SIMULATION_KEYS = ("fock_dims", "alpha_method", "n_traj", "seed", "rtol", "atol", "jobs",
                   "trajectory_rtol", "trajectory_atol")


def simulation_from_config(tree: dict, n_kpos: int | None = None) -> SimulationSettings:
    sim = _mapping(tree, "simulation", required=False)
    _check_keys(sim, SIMULATION_KEYS, "simulation")
    dims = sim.get("fock_dims")
    if dims is not None:
        if not isinstance(dims, list) or not all(
                isinstance(d, int) and not isinstance(d, bool) and d >= 2 for d in dims):
            raise ConfigError("expected a list of integers >= 2", "simulation.fock_dims")
        if n_kpos is not None and len(dims) != n_kpos:
            raise ConfigError(f"needs one entry per KPO ({n_kpos})", "simulation.fock_dims")
        dims = tuple(dims)
    method = sim.get("alpha_method", "variational")
    if method not in ALPHA_METHODS:
        raise ConfigError(f"must be one of {ALPHA_METHODS}", "simulation.alpha_method")
    n_traj = _integer(sim, "n_traj", "simulation", 400)
    if n_traj < 1:
        raise ConfigError("must be >= 1", "simulation.n_traj")
    seed = _integer(sim, "seed", "simulation", 0)
    rtol = _number(sim, "rtol", "simulation", 1e-8)
    atol = _number(sim, "atol", "simulation", 1e-10)
    traj_rtol = _number(sim, "trajectory_rtol", "simulation", required=False)
    traj_atol = _number(sim, "trajectory_atol", "simulation", required=False)
    for key, value in (("rtol", rtol), ("atol", atol), ("trajectory_rtol", traj_rtol),
                       ("trajectory_atol", traj_atol)):
        if value is not None and not value > 0:
            raise ConfigError("tolerances must be > 0", f"simulation.{key}")
    jobs = _integer(sim, "jobs", "simulation", 1)
    return SimulationSettings(dims, method, n_traj, seed, rtol, atol, max(1, jobs),
                              traj_rtol, traj_atol)


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepSpec:
    """Grid of config variations; ``axes`` are ``(key path, values)`` pairs."""

    base: dict
    axes: tuple[tuple[str, tuple[float, ...]], ...]
    methods: tuple[str, ...]
    n_traj: int | None = None
    seed: int | None = None
    name: str = "sweep"
    extra: dict = field(default_factory=dict)

    def points(self) -> list[dict[str, float]]:
        """Grid points in row-major axis order."""
        import itertools
        names = [path for path, _ in self.axes]
        return [dict(zip(names, combo))
                for combo in itertools.product(*(values for _, values in self.axes))]

    def config_at(self, point: dict[str, float]) -> dict:
        tree = self.base
        for path, value in point.items():
            tree = set_path(tree, path, value)
        return tree


def sweep_from_config(tree: dict, base_dir: Path | None = None) -> SweepSpec:
    if not isinstance(tree, dict):
        raise ConfigError("sweep config root must be a mapping")
    _check_keys(tree, ("name", "description", "base", "axes", "methods", "n_traj", "seed",
                       "simulation"), "")
    if "base" not in tree:
        raise ConfigError("missing required key", "base")
    base = tree["base"]
    if isinstance(base, str):
        base = load_config(resolve_config_path(base, base_dir))
    if not isinstance(base, dict):
        raise ConfigError("expected a mapping or a config file name", "base")
    if "simulation" in tree:
        sim = dict(base.get("simulation", {}))
        sim.update(_mapping(tree, "simulation"))
        base = {**base, "simulation": sim}
    network_from_config(base)
    axes_raw = _list(tree, "axes")
    if not axes_raw:
        raise ConfigError("sweep needs at least one axis", "axes")
    axes = []
    for i, ax in enumerate(axes_raw):
        where = f"axes[{i}]"
        if not isinstance(ax, dict) or "path" not in ax:
            raise ConfigError("axis needs a 'path'", where)
        path = ax["path"]
        current = get_path(base, path)
        if isinstance(current, bool) or not isinstance(current, (int, float)):
            raise ConfigError(f"{path} is not a numeric parameter", f"{where}.path")
        if "values" in ax:
            values = ax["values"]
            if not isinstance(values, list) or not values or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
                raise ConfigError("expected a non-empty list of numbers", f"{where}.values")
        elif "range" in ax:
            rng = ax["range"]
            if not isinstance(rng, dict):
                raise ConfigError("expected a mapping", f"{where}.range")
            start = _number(rng, "start", f"{where}.range")
            stop = _number(rng, "stop", f"{where}.range")
            num = _integer(rng, "num", f"{where}.range")
            if num < 1:
                raise ConfigError("must be >= 1", f"{where}.range.num")
            values = [start + (stop - start) * k / (num - 1) if num > 1 else start
                      for k in range(num)]
            values = [round(v, 12) for v in values]
        else:
            raise ConfigError("axis needs 'values' or 'range'", where)
        axes.append((path, tuple(float(v) for v in values)))
    methods = tree.get("methods")
    if not isinstance(methods, list) or not methods:
        raise ConfigError("expected a non-empty list of methods", "methods")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}", "methods")
    n_traj = tree.get("n_traj")
    seed = tree.get("seed")
    for key, value in (("n_traj", n_traj), ("seed", seed)):
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError("expected an integer", key)
    return SweepSpec(base, tuple(axes), tuple(methods), n_traj, seed,
                     str(tree.get("name", "sweep")))


# ---------------------------------------------------------------- files

def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", str(path)) from err
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON ({err.msg} at line {err.lineno})", str(path)) from err


def builtin_config_names() -> list[str]:
    root = resources.files("kpoanneal") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config_path(name, base_dir: Path | None = None) -> Path:
    """File path, a path relative to ``base_dir``, or a built-in config name."""
    candidate = Path(name)
    if candidate.exists():
        return candidate
    if base_dir is not None and (base_dir / candidate).exists():
        return base_dir / candidate
    builtin = resources.files("kpoanneal") / "configs" / f"{candidate.stem}.json"
    if builtin.is_file():
        return Path(str(builtin))
    raise ConfigError("config file not found (nor a built-in config name)", str(name))


def load_network(path) -> tuple[NetworkSpec, SimulationSettings, dict]:
    """Load, validate and return ``(network, settings, raw tree)``."""
    tree = load_config(resolve_config_path(path))
    network = network_from_config(tree)
    return network, simulation_from_config(tree, network.n_kpos), tree
