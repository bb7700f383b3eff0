"""KPO network description and Hamiltonian / collapse-operator builders.

Units: angular frequencies in rad/us, times in us, hbar = 1. Config files
carry ``value / 2pi`` in MHz (kHz for dephasing); :func:`mhz` converts.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidDimensionError, InvalidParameterError
from .fock_ops import annihilator_sparse, kron_embed
from .spin_projection import (IDENTITY2, LOWER_X, RAISE_X, SIGMA_X, SIGMA_Z,
                              spin_coefficients)

TWO_PI = 2 * math.pi


def mhz(value: float) -> float:
    """``value/2pi`` in MHz -> angular frequency in rad/us."""
    return TWO_PI * value


def khz(value: float) -> float:
    return TWO_PI * value * 1e-3


@dataclass(frozen=True)
class KpoSpec:
    kerr: float
    pump_final: float
    drive_final_rescaled: float = 0.0
    photon_loss: float = 0.0

    def __post_init__(self):
        if not self.kerr < 0:
            raise InvalidParameterError(f"kerr must be negative, got {self.kerr}")
        if self.pump_final < 0:
            raise InvalidParameterError(f"pump_final must be >= 0, got {self.pump_final}")
        if self.photon_loss < 0:
            raise InvalidParameterError(f"photon_loss must be >= 0, got {self.photon_loss}")


@dataclass(frozen=True)
class CouplingSpec:
    """``g (a0^dag a1 + h.c.)`` or ``g (a0^dag a1^dag a2 a3 + h.c.)``."""

    kind: str
    sites: tuple[int, ...]
    strength: float

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))
        expected = {"two_body": 2, "four_body": 4}.get(self.kind)
        if expected is None:
            raise InvalidParameterError(f"unknown coupling kind {self.kind!r}")
        if len(self.sites) != expected:
            raise InvalidParameterError(f"{self.kind} coupling needs {expected} sites")
        if len(set(self.sites)) != len(self.sites):
            raise InvalidParameterError(f"coupling sites must be distinct: {self.sites}")

    @property
    def daggers(self) -> tuple[bool, ...]:
        """Which factors of the non-h.c. product are creation operators."""
        return (True, False) if self.kind == "two_body" else (True, True, False, False)


@dataclass(frozen=True)
class ScheduleSpec:
    """Annealing schedule.

    ``t_s``: ramp time of pump, drive and detuning. ``t_sp``: drive hold after
    ``t_s``. ``t_rd``: readout starts at ``t_s + t_rd``; the drive ramps
    linearly to zero on ``[t_s + t_sp, t_s + t_rd]``. ``t_r``: readout length.
    """

    t_s: float
    t_sp: float
    t_rd: float
    t_r: float
    delta_initial: float
    pump_exponent: float = 2.5
    drive_exponent: float = 1.0
    grid_points: int = 200

    def __post_init__(self):
        for name in ("t_s", "t_sp", "t_rd", "t_r"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be > 0")
        if self.t_rd < self.t_sp:
            raise InvalidParameterError("t_rd must be >= t_sp")
        if not self.delta_initial < 0:
            raise InvalidParameterError("delta_initial must be negative")
        if self.grid_points < 2:
            raise InvalidParameterError("grid_points must be >= 2")

    @property
    def t_end(self) -> float:
        return self.t_s + self.t_rd + self.t_r

    @property
    def readout_window(self) -> tuple[float, float]:
        return self.t_s + self.t_rd, self.t_end

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Times where some schedule quantity has a kink or a jump."""
        return tuple(sorted({self.t_s, self.t_s + self.t_sp, self.t_s + self.t_rd}))


QUANTITIES = ("delta", "pump_fraction", "drive_fraction")


def schedule_value(schedule: ScheduleSpec, quantity: str, t):
    """Detuning (rad/us) or pump/drive fraction in ``[0, 1]`` at time ``t``.

    ``t`` may be a scalar or an array.
    """
    t_arr = np.asarray(t, dtype=float)
    eps = 1e-12 * max(1.0, schedule.t_end)
    if np.any(t_arr < -eps) or np.any(t_arr > schedule.t_end + eps):
        raise InvalidParameterError(f"t outside [0, {schedule.t_end}]")
    t_arr = np.clip(t_arr, 0.0, schedule.t_end)
    ramp = np.minimum(t_arr / schedule.t_s, 1.0)
    if quantity == "delta":
        out = schedule.delta_initial * (1.0 - ramp)
    elif quantity == "pump_fraction":
        out = ramp ** schedule.pump_exponent
    elif quantity == "drive_fraction":
        hold_end = schedule.t_s + schedule.t_sp
        off = schedule.t_s + schedule.t_rd
        out = ramp ** schedule.drive_exponent
        if off > hold_end:
            down = np.clip((off - t_arr) / (off - hold_end), 0.0, 1.0)
            out = np.where(t_arr > hold_end, down, out)
        else:
            out = np.where(t_arr > hold_end, 0.0, out)
    else:
        raise InvalidParameterError(f"unknown schedule quantity {quantity!r}")
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class NetworkSpec:
    kpos: tuple[KpoSpec, ...]
    couplings: tuple[CouplingSpec, ...]
    dephasing: float
    schedule: ScheduleSpec

    def __post_init__(self):
        object.__setattr__(self, "kpos", tuple(self.kpos))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        if not self.kpos:
            raise InvalidParameterError("network needs at least one KPO")
        if self.dephasing < 0:
            raise InvalidParameterError("dephasing must be >= 0")
        for c in self.couplings:
            if any(not 0 <= s < len(self.kpos) for s in c.sites):
                raise InvalidParameterError(f"coupling sites {c.sites} out of range")
            if not self.schedule.delta_initial < -abs(c.strength):
                raise InvalidParameterError(
                    "delta_initial must be below -|g| so the vacuum is the unique "
                    "maximal-energy initial state")

    @property
    def n_kpos(self) -> int:
        return len(self.kpos)

    @cached_property
    def drives(self) -> np.ndarray:
        """Unrescaled final drive amplitudes ``Omega_j``."""
        return np.array([rescale_drive(self, j) for j in range(self.n_kpos)])

    def detuning(self, t) -> float:
        return schedule_value(self.schedule, "delta", t)

    def pumps(self, t) -> np.ndarray:
        frac = schedule_value(self.schedule, "pump_fraction", t)
        return frac * np.array([k.pump_final for k in self.kpos])

    def drives_at(self, t) -> np.ndarray:
        return schedule_value(self.schedule, "drive_fraction", t) * self.drives

    @property
    def kerrs(self) -> np.ndarray:
        return np.array([k.kerr for k in self.kpos])


def rescale_drive(network: NetworkSpec, j: int) -> float:
    """Physical drive ``Omega_j`` from its rescaled value.

    Inverts ``Omega~_j = Omega_j prod_{l != j} sqrt(-K_l / p_l)``.
    """
    target = network.kpos[j].drive_final_rescaled
    if target == 0.0:
        return 0.0
    factor = 1.0
    for l, kpo in enumerate(network.kpos):
        if l == j:
            continue
        if kpo.pump_final == 0:
            raise InvalidParameterError(
                f"cannot rescale drive of KPO {j}: pump of KPO {l} is zero")
        factor *= math.sqrt(-kpo.pump_final / kpo.kerr)
    return target * factor


# ---------------------------------------------------------------- Fock side

@dataclass
class FockSystem:
    """Sparse time-dependent Fock Hamiltonian ``sum_k c_k(t) H_k`` plus collapse ops.

    Terms: static part (Kerr + couplings), total number (times detuning),
    two-photon pump (times pump fraction), drive (times drive fraction).
    """

    network: NetworkSpec
    dims: tuple[int, ...]
    terms: list = field(init=False)
    collapse: list = field(init=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        net = self.network
        if len(self.dims) != net.n_kpos:
            raise InvalidDimensionError(f"{len(self.dims)} dims for {net.n_kpos} KPOs")
        ops = [kron_embed(annihilator_sparse(d), j, self.dims) for j, d in enumerate(self.dims)]
        self.annihilators = ops
        self.numbers = [(a.conj().T @ a).tocsr() for a in ops]
        D = self.dim
        static = sp.csr_matrix((D, D), dtype=complex)
        pump = sp.csr_matrix((D, D), dtype=complex)
        drive = sp.csr_matrix((D, D), dtype=complex)
        n_tot = sp.csr_matrix((D, D), dtype=complex)
        for j, (a, kpo) in enumerate(zip(ops, net.kpos)):
            ad = a.conj().T
            static = static + 0.5 * kpo.kerr * (ad @ ad @ a @ a)
            n_tot = n_tot + self.numbers[j]
            pump = pump + 0.5 * kpo.pump_final * (ad @ ad + a @ a)
            drive = drive + net.drives[j] * (ad + a)
        for c in net.couplings:
            x = _coupling_product([ops[s] for s in c.sites], c.daggers)
            static = static + c.strength * (x + x.conj().T)
        self.terms = [t.tocsr() for t in (static, n_tot, pump, drive)]
        for t in self.terms:
            t.eliminate_zeros()
        self.collapse = []
        for j, kpo in enumerate(net.kpos):
            if kpo.photon_loss > 0:
                self.collapse.append((ops[j], 0.5 * kpo.photon_loss))
        if net.dephasing > 0:
            for j in range(net.n_kpos):
                self.collapse.append((self.numbers[j], net.dephasing))

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    def coefficients(self, t: float) -> np.ndarray:
        sched = self.network.schedule
        return np.array([1.0, schedule_value(sched, "delta", t),
                         schedule_value(sched, "pump_fraction", t),
                         schedule_value(sched, "drive_fraction", t)])

    def hamiltonian(self, t: float):
        c = self.coefficients(t)
        H = c[0] * self.terms[0]
        for ck, term in zip(c[1:], self.terms[1:]):
            if ck != 0.0:
                H = H + ck * term
        return H

    def collapse_operators(self, t: float | None = None):
        return self.collapse

    time_dependent_collapse = False

    @cached_property
    def _nonhermitian(self):
        D = self.dim
        out = sp.csr_matrix((D, D), dtype=complex)
        for op, rate in self.collapse:
            out = out - 0.5j * rate * (op.conj().T @ op)
        return out.tocsr()

    def effective_hamiltonian(self, t: float):
        """``H(t) - (i/2) sum_k rate_k C_k^dag C_k``."""
        return self.hamiltonian(t) + self._nonhermitian

    BAND_OFFSETS = (-2, -1, 1, 2)

    def mode_bands(self) -> np.ndarray:
        """Single-mode pump and drive terms as bands, shape ``(n_kpos, 2, 4, max dim)``.

        ``bands[j, k, o, n]`` is the ``(n, n + BAND_OFFSETS[o])`` entry of the
        mode-``j`` factor of term ``k`` (0: pump, 1: drive).
        """
        bands = np.zeros((self.network.n_kpos, 2, 4, max(self.dims)))
        for j, (d, kpo) in enumerate(zip(self.dims, self.network.kpos)):
            n = np.arange(d, dtype=float)
            pump, drive = bands[j]
            pump[0, 2:d] = 0.5 * kpo.pump_final * np.sqrt(n[2:] * (n[2:] - 1))
            pump[3, :d - 2] = 0.5 * kpo.pump_final * np.sqrt((n[:-2] + 1) * (n[:-2] + 2))
            drive[1, 1:d] = self.network.drives[j] * np.sqrt(n[1:])
            drive[2, :d - 1] = self.network.drives[j] * np.sqrt(n[:-1] + 1)
        return bands

    def effective_decomposition(self):
        """``(terms, coefficients)`` with ``H_eff(t) = sum_k coefficients(t)[k] terms[k]``."""
        return [self.terms[0] + self._nonhermitian] + self.terms[1:], self.coefficients

    @cached_property
    def reference_energy_weights(self) -> tuple[float, float]:
        """``(A, B)`` of the bare-cat energy ``A f_p^2 + B delta f_p`` (``f_p``: pump fraction).

        With ``alpha_j^2 = p_j / |K_j|`` the coherent-state energy of one KPO is
        ``p_j^2 / (2 |K_j|) + delta alpha_j^2``.
        """
        p = np.array([k.pump_final for k in self.network.kpos])
        K = np.abs(self.network.kerrs)
        return float(np.sum(p**2 / (2 * K))), float(np.sum(p / K))

    def reference_energy(self, t: float) -> float:
        _, delta, pump, _ = self.coefficients(t)
        A, B = self.reference_energy_weights
        return A * pump**2 + B * delta * pump

    def trajectory_terms(self):
        """Terms of ``H_eff`` plus an identity term carrying the reference energy.

        Pure-state evolution subtracts :meth:`reference_energy` (a global
        phase) so the integrator does not have to resolve the fast overall
        phase rotation.
        """
        ident = sp.identity(self.dim, dtype=complex, format="csr")
        return [(self.terms[0] + self._nonhermitian).tocsr()] + self.terms[1:] + [ident]

    def trajectory_coefficients(self, t: float) -> np.ndarray:
        return np.append(self.coefficients(t), -self.reference_energy(t))

    @cached_property
    def _stacked(self):
        return sp.vstack(self.trajectory_terms(), format="csr")

    def apply_effective(self, t: float, psi: np.ndarray) -> np.ndarray:
        """``(H_eff(t) - E_ref(t)) psi``; the real shift only changes the global phase."""
        parts = (self._stacked @ psi).reshape(len(self.terms) + 1, -1)
        return self.trajectory_coefficients(t) @ parts


def _coupling_product(ops, daggers):
    out = None
    for op, dag in zip(ops, daggers):
        factor = op.conj().T if dag else op
        out = factor if out is None else out @ factor
    return out


def hamiltonian_fock(network: NetworkSpec, t: float, dims: Sequence[int], sparse: bool = False):
    """Full Fock-space Hamiltonian at time ``t`` (dense unless ``sparse``)."""
    H = FockSystem(network, tuple(dims)).hamiltonian(t)
    return H.tocsr() if sparse else H.toarray()


# ---------------------------------------------------------------- spin side

class SpinExpansion:
    """Spin Hamiltonian as a weighted sum of fixed ``2^N x 2^N`` matrices.

    Basis: identity, sigma_x and sigma_z on every site, then for each coupling
    the ``2^k`` products of ``|-x><+x|`` / ``|+x><-x|`` factors (plus their
    Hermitian conjugates). Weights depend on the amplitudes and the time; the
    decomposition is exact because ``P`` factorizes over sites.
    """

    def __init__(self, network: NetworkSpec):
        self.network = network
        n = network.n_kpos
        dims = [2] * n
        basis = [np.eye(2**n, dtype=complex)]
        basis += [kron_embed(SIGMA_X, j, dims) for j in range(n)]
        basis += [kron_embed(SIGMA_Z, j, dims) for j in range(n)]
        self.coupling_choices = []
        for c in network.couplings:
            choices = list(itertools.product((0, 1), repeat=len(c.sites)))
            self.coupling_choices.append(choices)
            for choice in choices:
                mat = np.eye(1, dtype=complex)
                factors = {s: (LOWER_X, RAISE_X)[b] for s, b in zip(c.sites, choice)}
                for j in range(n):
                    mat = np.kron(mat, factors.get(j, IDENTITY2))
                basis.append(mat + mat.conj().T)
        self.basis = np.array(basis)
        self.dim = 2**n
        self._flat = self.basis.reshape(len(basis), -1)

    def weights(self, alphas, t: float) -> np.ndarray:
        """Weights for amplitudes of shape ``(N,)`` or ``(M, N)``."""
        net = self.network
        alphas = np.asarray(alphas, dtype=float)
        c_mp, c_pm, c_x, c_id = spin_coefficients(alphas)
        delta = net.detuning(t)
        pumps = net.pumps(t)
        drives = net.drives_at(t)
        scalar = 0.5 * net.kerrs * alphas**4 + pumps * alphas**2 + delta * c_id
        cols = [scalar.sum(axis=-1)[..., None], delta * c_x, drives * (c_mp + c_pm)]
        for c, choices in zip(net.couplings, self.coupling_choices):
            sites = list(c.sites)
            # factor coefficients for LOWER_X (0) and RAISE_X (1) per site
            coef = []
            for s, dag in zip(sites, c.daggers):
                a_coef = (c_mp[..., s], c_pm[..., s])
                coef.append((a_coef[1], a_coef[0]) if dag else a_coef)
            w = [c.strength * np.prod([coef[i][b] for i, b in enumerate(ch)], axis=0)
                 for ch in choices]
            cols.append(np.stack(w, axis=-1))
        return np.concatenate(cols, axis=-1)

    def hamiltonian(self, alphas, t: float) -> np.ndarray:
        w = self.weights(alphas, t)
        return (w @ self._flat).reshape(w.shape[:-1] + (self.dim, self.dim))


def hamiltonian_spin(network: NetworkSpec, alphas: Sequence[float], t: float) -> np.ndarray:
    """``P(alpha) H(t) P(alpha)^dagger`` from the closed-form projections.

    Kerr, pump and detuning offsets are kept on the identity.
    """
    return SpinExpansion(network).hamiltonian(np.asarray(alphas, dtype=float), t)


class SpinSystem:
    """Time-dependent spin-model Hamiltonian and collapse operators.

    ``alpha_of_t`` returns the per-KPO amplitudes at time ``t`` (typically an
    :class:`~kpoanneal.alpha.AlphaTrajectory`). With ``drop_scalar`` the
    identity part of the Hamiltonian (Kerr, pump and detuning offsets) is
    removed; it only contributes a global phase.
    """

    time_dependent_collapse = True

    def __init__(self, network: NetworkSpec, alpha_of_t, drop_scalar: bool = True):
        self.network = network
        self.alpha_of_t = alpha_of_t
        self.drop_scalar = drop_scalar
        self.expansion = SpinExpansion(network)
        self.dim = self.expansion.dim
        self.dims = (2,) * network.n_kpos
        n = network.n_kpos
        self._lower = np.array([kron_embed(LOWER_X, j, self.dims) for j in range(n)])
        self._raise = np.array([kron_embed(RAISE_X, j, self.dims) for j in range(n)])
        self._sx = np.array([kron_embed(SIGMA_X, j, self.dims) for j in range(n)])
        self._loss = np.array([0.5 * k.photon_loss for k in network.kpos])

    def hamiltonian(self, t: float) -> np.ndarray:
        alphas = np.asarray(self.alpha_of_t(t), dtype=float)
        w = self.expansion.weights(alphas, t)
        if self.drop_scalar:
            w[0] = 0.0
        return (w @ self.expansion._flat).reshape(self.dim, self.dim)

    def collapse_operators(self, t: float):
        return collapse_operators(self.network, "spin", alphas=self.alpha_of_t(t))

    def effective_hamiltonian(self, t: float) -> np.ndarray:
        H = self.hamiltonian(t).astype(complex)
        for op, rate in self.collapse_operators(t):
            H = H - 0.5j * rate * (op.conj().T @ op)
        return H

    def apply_effective(self, t: float, psi: np.ndarray) -> np.ndarray:
        return self.effective_hamiltonian(t) @ psi

    def dense_lindblad(self, t: float):
        """``(H_eff, [(C, rate), ...])`` as dense arrays; same channels as
        :meth:`collapse_operators`, built from cached site operators."""
        alphas = np.asarray(self.alpha_of_t(t), dtype=float)
        c_mp, c_pm, c_x, _ = spin_coefficients(alphas)
        w = self.expansion.weights(alphas, t)
        if self.drop_scalar:
            w[0] = 0.0
        H = (w @ self.expansion._flat).reshape(self.dim, self.dim)
        ops = [(c_mp[j] * self._lower[j] + c_pm[j] * self._raise[j], rate)
               for j, rate in enumerate(self._loss) if rate > 0]
        if self.network.dephasing > 0:
            ops += [(c_x[j] * self._sx[j], self.network.dephasing)
                    for j in range(self.network.n_kpos)]
        for C, rate in ops:
            H = H - 0.5j * rate * (C.conj().T @ C)
        return H, ops


def spin_site_operators(alphas: Sequence[float]):
    """Per-site projected annihilators and traceless number operators (z basis)."""
    c_mp, c_pm, c_x, _ = spin_coefficients(np.asarray(alphas, dtype=float))
    n = len(alphas)
    dims = [2] * n
    lower = [kron_embed(c_mp[j] * LOWER_X + c_pm[j] * RAISE_X, j, dims) for j in range(n)]
    deph = [kron_embed(c_x[j] * SIGMA_X, j, dims) for j in range(n)]
    return lower, deph


def collapse_operators(network: NetworkSpec, representation: str, *, alphas=None, dims=None,
                       t: float | None = None):
    """Lindblad channels as ``(operator, rate)`` pairs.

    Photon loss ``a_j`` enters with rate ``kappa_j / 2`` and dephasing
    ``n_j`` with rate ``gamma``. In the spin representation the operators are
    the projections at ``alphas``, with the identity part of the projected
    number operator dropped (the dissipator ignores it).
    """
    if representation == "fock":
        if dims is None:
            raise InvalidParameterError("fock collapse operators need dims")
        return [(op.toarray(), rate) for op, rate in FockSystem(network, dims).collapse]
    if representation != "spin":
        raise InvalidParameterError(f"unknown representation {representation!r}")
    if alphas is None:
        raise InvalidParameterError("spin collapse operators need alphas")
    lower, deph = spin_site_operators(alphas)
    out = [(lower[j], 0.5 * k.photon_loss) for j, k in enumerate(network.kpos) if k.photon_loss > 0]
    if network.dephasing > 0:
        out += [(op, network.dephasing) for op in deph]
    return out


def parse_config(config) -> np.ndarray:
    """``"+-+"`` or a sequence of +-1 -> array of signs."""
    if isinstance(config, str):
        mapping = {"+": 1, "-": -1}
        try:
            return np.array([mapping[ch] for ch in config], dtype=float)
        except KeyError as err:
            raise InvalidParameterError(f"bad spin configuration {config!r}") from err
    s = np.asarray(config, dtype=float)
    if not np.all(np.abs(s) == 1):
        raise InvalidParameterError("spin signs must be +-1")
    return s


def config_labels(n: int) -> list[str]:
    """Configuration strings in spin-basis index order (``"++"``, ``"+-"``, ...)."""
    return ["".join(bits) for bits in itertools.product("+-", repeat=n)]


def classical_energy(network: NetworkSpec, config, alphas: Sequence[float], t: float) -> float:
    """Energy of the product coherent state ``|s_0 alpha_0> (x) ...``.

    Only the sign-dependent terms are kept: ``2 g prod(alpha s)`` for every
    coupling and ``2 Omega_j(t) alpha_j s_j``.
    """
    s = parse_config(config)
    alphas = np.asarray(alphas, dtype=float)
    if len(s) != network.n_kpos or len(alphas) != network.n_kpos:
        raise InvalidDimensionError("config and alphas must have one entry per KPO")
    x = alphas * s
    energy = sum(2 * c.strength * np.prod(x[list(c.sites)]) for c in network.couplings)
    return float(energy + 2 * np.dot(network.drives_at(t), x))
