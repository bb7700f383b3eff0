import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import dense_annihilator, make_network
from kpoanneal.alpha import AlphaTrajectory
from kpoanneal.errors import (IntegrityError, InvalidDimensionError, InvalidParameterError,
                              NumericalConsistencyError)
from kpoanneal.fock_ops import coherent_state, product_state
from kpoanneal.model import FockSystem, SpinSystem, mhz
from kpoanneal.solvers import (FockObserver, SimulationResult, SpinObserver, StaticSystem,
                               check_density_matrix, density_matrix, evolve_master,
                               evolve_trajectories, lindblad_rhs, most_likely,
                               outcome_probabilities, outcome_table_from_series,
                               quadrature_sign_outcome, readout_average, trajectory_rng)
from kpoanneal.spin_projection import SIGMA_X, spin_operators


def liouvillian_oracle(H_of_t, ops_of_t, rho0, t_grid):
    """Independent solve: dense Liouvillian in row-major vectorization with DOP853."""
    d = rho0.shape[0]
    I = np.eye(d)

    def f(t, v):
        H = H_of_t(t)
        L = -1j * (np.kron(H, I) - np.kron(I, H.T))
        for C, rate in ops_of_t(t):
            CdC = C.conj().T @ C
            L += rate * (np.kron(C, C.conj()) - 0.5 * np.kron(CdC, I) - 0.5 * np.kron(I, CdC.T))
        return L @ v

    sol = solve_ivp(f, (t_grid[0], t_grid[-1]), rho0.ravel().astype(complex), method="DOP853",
                    t_eval=t_grid, rtol=1e-10, atol=1e-12)
    return sol.y.T.reshape(len(t_grid), d, d)


# ---------------------------------------------------------------- master equation

def test_trivial_evolution_keeps_state():
    rho0 = density_matrix(np.array([0.6, 0.8j]))
    sol = evolve_master(StaticSystem(np.zeros((2, 2))), rho0, np.linspace(0, 1, 5))
    for rho in sol.states:
        np.testing.assert_allclose(rho, rho0, atol=1e-14)


def test_amplitude_damping_rate_convention():
    kappa = mhz(1.1)
    net = make_network(pump=0.0, kappa=1.1)
    system = FockSystem(net, (4,))
    # drop the Kerr and detuning terms: loss-only dynamics
    system.terms = [0 * t for t in system.terms]
    rho0 = np.zeros((4, 4), dtype=complex)
    rho0[1, 1] = 1.0
    t = np.linspace(0, 0.4, 13)
    sol = evolve_master(system, rho0, t)
    pop1 = sol.states[:, 1, 1].real
    np.testing.assert_allclose(pop1, np.exp(-(kappa / 2) * t), rtol=1e-7)
    half_life = math.log(2) / (kappa / 2)
    assert np.interp(half_life, t, pop1) == pytest.approx(0.5, abs=2e-3)


def test_fock_master_matches_liouvillian_oracle():
    net = make_network(pump=30.0, drive=3.0, kappa=1.1, gamma_khz=7.7)
    dims = (8,)
    system = FockSystem(net, dims)
    rho0 = np.zeros((8, 8), dtype=complex)
    rho0[0, 0] = 1
    t = np.linspace(0, net.schedule.t_end, 9)
    sol = evolve_master(system, rho0, t, breakpoints=net.schedule.breakpoints)
    ops = [(op.toarray(), r) for op, r in system.collapse]
    ref = liouvillian_oracle(lambda s: system.hamiltonian(s).toarray(), lambda s: ops, rho0, t)
    np.testing.assert_allclose(sol.states, ref, atol=2e-6)


def test_compiled_and_generic_rhs_agree(two_kpo):
    system = FockSystem(two_kpo, (4, 5))
    rng = np.random.default_rng(2)
    M = rng.normal(size=(20, 20)) + 1j * rng.normal(size=(20, 20))
    rho = M @ M.conj().T
    rho /= np.trace(rho)
    fast, slow = lindblad_rhs(system, compiled=True), lindblad_rhs(system, compiled=False)
    for t in (0.05, 0.3, 0.7):
        np.testing.assert_allclose(fast(t, rho), slow(t, rho), atol=1e-9)


def test_spin_master_matches_liouvillian_oracle(two_kpo):
    traj = AlphaTrajectory(np.linspace(0, two_kpo.schedule.t_end, 30),
                           np.outer(np.linspace(0, 1, 30), [3.4, 3.6]) ** 0.5 * 1.8)
    system = SpinSystem(two_kpo, traj)
    plus = np.ones(4) / 2
    rho0 = density_matrix(plus)
    t = np.linspace(0, 0.55, 6)  # ramp, hold and the start of the drive ramp-down
    sol = evolve_master(system, rho0, t, breakpoints=two_kpo.schedule.breakpoints)
    ref = liouvillian_oracle(system.hamiltonian, system.collapse_operators, rho0, t)
    np.testing.assert_allclose(sol.states, ref, atol=1e-6)


def test_density_matrix_invariants_tracked(two_kpo):
    traj = AlphaTrajectory([0.0, two_kpo.schedule.t_end], [[0, 0], [3.4, 3.6]])
    sol = evolve_master(SpinSystem(two_kpo, traj), density_matrix(np.ones(4) / 2),
                        np.linspace(0, two_kpo.schedule.t_end, 20))
    d = sol.diagnostics
    assert d["max_trace_dev"] < 1e-6 and d["max_hermitian_dev"] < 1e-9
    assert d["min_eig"] > -1e-6


def test_energy_conserved_without_noise():
    rng = np.random.default_rng(5)
    M = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    H = M + M.conj().T
    psi = rng.normal(size=6) + 0j
    psi /= np.linalg.norm(psi)
    sol = evolve_master(StaticSystem(H), density_matrix(psi), np.linspace(0, 3, 7))
    energies = [np.trace(H @ rho).real for rho in sol.states]
    assert np.ptp(energies) < 1e-7


def test_identity_shift_of_dephasing_changes_nothing():
    ops = spin_operators(0.8)
    H = 2.0 * ops.number() + 1.5 * ops.drive()
    rate = 3.0
    rho0 = density_matrix(np.array([1.0, 1.0]) / math.sqrt(2))
    t = np.linspace(0, 2, 9)
    dropped = evolve_master(StaticSystem(H, [(ops.c_x * SIGMA_X, rate)]), rho0, t)
    full = evolve_master(StaticSystem(H, [(ops.number(), rate)]), rho0, t)
    for obs in (SIGMA_X, ops.drive()):
        a = [np.trace(obs @ r).real for r in dropped.states]
        b = [np.trace(obs @ r).real for r in full.states]
        np.testing.assert_allclose(a, b, atol=1e-7)


def test_integrity_breach_raises():
    H = np.array([[0, 0], [0, -5j]])  # non-Hermitian: population leaks away
    with pytest.raises(IntegrityError):
        evolve_master(StaticSystem(H), density_matrix(np.array([0, 1.0])), [0.0, 1.0])


def test_invalid_initial_state():
    with pytest.raises(InvalidParameterError):
        evolve_master(StaticSystem(np.zeros((2, 2))), np.eye(2), [0, 1])
    with pytest.raises(InvalidDimensionError):
        evolve_master(StaticSystem(np.zeros((2, 2))), np.eye(3) / 3, [0, 1])


def test_check_density_matrix_reports():
    stats = check_density_matrix(np.diag([0.25, 0.75]))
    assert stats["trace_dev"] == 0 and stats["min_eig"] == 0.25


# ---------------------------------------------------------------- trajectories

def test_trajectories_without_noise_are_unitary():
    net = make_network(pump=20.0, drive=2.0)
    system = FockSystem(net, (12,))
    psi0 = np.eye(12)[0].astype(complex)
    t = np.linspace(0, net.schedule.t_end, 9)
    obs = FockObserver(system, lambda s: [0.5])
    ens = evolve_trajectories(system, psi0, 3, 0, t, breakpoints=net.schedule.breakpoints,
                              observe=obs)
    assert all(j == [] for j in ens.jumps)
    assert np.max(ens.stderr["n_0"]) < 1e-10
    sol = evolve_master(system, density_matrix(psi0), t, breakpoints=net.schedule.breakpoints,
                        observe=obs, store=False)
    np.testing.assert_allclose(ens.mean["n_0"], sol.series["n_0"], atol=1e-6)


def test_python_trajectories_match_master_within_errors():
    a = dense_annihilator(5)
    H = 3.0 * (a + a.conj().T) + 1.0 * a.conj().T @ a
    system = StaticSystem(H, [(a, 2.0)])
    psi0 = np.eye(5)[2].astype(complex)
    t = np.linspace(0, 1.0, 11)
    n_op = a.conj().T @ a

    def observe(_, psi):
        return {"n": float(np.vdot(psi, n_op @ psi).real)}

    ens = evolve_trajectories(system, psi0, 300, 11, t, observe=observe)
    sol = evolve_master(system, density_matrix(psi0), t, observe=lambda _, r: {
        "n": float(np.trace(n_op @ r).real)}, store=False)
    z = np.abs(ens.mean["n"] - sol.series["n"])[1:] / ens.stderr["n"][1:]
    assert np.all(z < 3.5)
    assert sum(len(j) for j in ens.jumps) > 0


def test_trajectories_are_reproducible_and_independent_of_jobs():
    net = make_network(pump=20.0, kappa=8.0, gamma_khz=500.0)
    system = FockSystem(net, (10,))
    psi0 = np.eye(10)[0].astype(complex)
    t = np.linspace(0, net.schedule.t_end, 7)
    obs = FockObserver(system, lambda s: [0.8])
    kw = dict(breakpoints=net.schedule.breakpoints, observe=obs)
    a = evolve_trajectories(system, psi0, 6, 42, t, **kw)
    b = evolve_trajectories(system, psi0, 6, 42, t, **kw)
    c = evolve_trajectories(system, psi0, 6, 42, t, jobs=2, **kw)
    assert a.jumps == b.jumps == c.jumps
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.samples, c.samples)
    d = evolve_trajectories(system, psi0, 6, 43, t, **kw)
    assert d.jumps != a.jumps


def test_trajectory_streams_depend_on_seed_and_index():
    assert trajectory_rng(1, 0).random() == trajectory_rng(1, 0).random()
    assert trajectory_rng(1, 0).random() != trajectory_rng(1, 1).random()
    assert trajectory_rng(1, 0).random() != trajectory_rng(2, 0).random()


class _Inconsistent:
    """Decays in norm but its only channel annihilates every state."""

    dim = 2
    time_dependent_collapse = False

    def collapse_operators(self, t=None):
        return [(np.zeros((2, 2)), 1.0)]

    def apply_effective(self, t, psi):
        return -1j * psi


def test_zero_rate_jump_raises():
    with pytest.raises(NumericalConsistencyError):
        evolve_trajectories(_Inconsistent(), np.array([1.0, 0.0]), 1, 0, [0.0, 50.0])


def test_trajectory_argument_checks():
    system = StaticSystem(np.zeros((2, 2)))
    with pytest.raises(InvalidParameterError):
        evolve_trajectories(system, np.array([1.0, 0]), 0, 0, [0, 1])
    with pytest.raises(InvalidDimensionError):
        evolve_trajectories(system, np.array([1.0, 0, 0]), 1, 0, [0, 1])


# ---------------------------------------------------------------- readout and outcomes

def test_readout_average_constant_and_linear():
    t = np.linspace(0, 2, 21)
    assert readout_average(t, np.full(21, 3.5), (0.5, 2.0)) == pytest.approx(3.5)
    a, b, T = 1.0, 0.7, 2.0
    assert readout_average(t, a + b * t, (0.0, T)) == pytest.approx(a + b * T / 2, abs=1e-14)
    out = readout_average(t, {"x": a + b * t}, (0.35, 1.25))
    assert out["x"] == pytest.approx(a + b * 0.8, abs=1e-14)
    with pytest.raises(InvalidParameterError):
        readout_average(t, t, (1.0, 2.5))


def test_spin_outcomes():
    plus_z = np.array([1.0, 0, 0, 0])
    table = outcome_probabilities(plus_z, "spin")
    assert table.probabilities["++"] == 1.0
    rho = np.diag([0.1, 0.2, 0.3, 0.4])
    assert outcome_probabilities(rho, "spin").probabilities["--"] == pytest.approx(0.4)
    with pytest.raises(InvalidDimensionError):
        outcome_probabilities(np.ones(3), "spin")


def test_fock_outcomes_of_coherent_pair():
    alpha, d = 2.0, 30
    plus = coherent_state(alpha, d)
    minus = plus * (-1.0) ** np.arange(d)
    table = outcome_probabilities(product_state([plus, minus]), "fock", [alpha, alpha], [d, d])
    assert table.probabilities["+-"] == pytest.approx(1.0, abs=math.exp(-2 * alpha**2))
    assert sum(table.probabilities.values()) == pytest.approx(1.0, abs=1e-12)
    assert table.leakage < 1e-8 and not table.warning


def test_fock_outcomes_flag_leakage():
    d = 12
    psi = np.zeros(d * d)
    psi[5 * d + 5] = 1.0
    table = outcome_probabilities(psi, "fock", [0.5, 0.5], [d, d])
    assert table.warning and table.leakage > 0.2
    assert sum(table.probabilities.values()) == pytest.approx(1.0)


def test_quadrature_sign_outcome():
    d = 20
    system = FockSystem(make_network(n=2), (d, d))
    plus = coherent_state(1.5, d)
    minus = plus * (-1.0) ** np.arange(d)
    psi = product_state([minus, plus])
    assert quadrature_sign_outcome(psi, system.annihilators) == "-+"


def test_observers_agree_on_coherent_products():
    d, alpha = 22, 1.7
    system = FockSystem(make_network(n=2), (d, d))
    plus = coherent_state(alpha, d)
    psi = product_state([plus, plus * (-1.0) ** np.arange(d)])
    obs = FockObserver(system, lambda t: [alpha, alpha], quadrature_sign=True)(0.0, psi)
    assert obs["pop_+-"] == pytest.approx(1.0, abs=math.exp(-2 * alpha**2))
    assert obs["sign_+-"] == 1.0 and obs["leakage"] < 1e-8
    assert obs["n_0"] == pytest.approx(alpha**2, abs=1e-9)
    assert obs["x_1"] == pytest.approx(-2 * alpha, abs=1e-8)
    spin_state = np.array([0, 1.0, 0, 0])
    sobs = SpinObserver(2, lambda t: [alpha, alpha])(0.0, spin_state)
    assert sobs["pop_+-"] == 1.0
    assert sobs["x_1"] == pytest.approx(-2 * alpha, abs=1e-3)
    assert sobs["n_0"] == pytest.approx(alpha**2, abs=0.1)


def test_outcome_table_from_series_renormalizes():
    t = np.linspace(0, 1, 11)
    series = {"pop_+": np.full(11, 0.6), "pop_-": np.full(11, 0.2)}
    avg, final, leak = outcome_table_from_series(t, series, (0.5, 1.0), ["+", "-"])
    assert avg == pytest.approx({"+": 0.75, "-": 0.25})
    assert final == pytest.approx({"+": 0.75, "-": 0.25})
    assert leak == pytest.approx(0.2)


def test_most_likely_ties_are_lexicographic():
    assert most_likely({"+-": 0.4, "++": 0.4, "--": 0.2}) == ("++", True)
    assert most_likely({"+-": 0.5, "++": 0.4}) == ("+-", False)


@pytest.mark.parametrize("suffix", [".csv", ".npz"])
def test_result_round_trip(tmp_path, suffix):
    res = SimulationResult(np.linspace(0, 1, 4), {"n_0": np.array([0, 0.1, 0.2, 1 / 3])},
                           {"+": 0.7, "-": 0.3}, {"+": 0.6, "-": 0.4},
                           {"method": "spin", "seed": 3})
    path = tmp_path / f"r{suffix}"
    res.save(path)
    back = SimulationResult.load(path)
    np.testing.assert_array_equal(back.times, res.times)
    np.testing.assert_array_equal(back.series["n_0"], res.series["n_0"])
    assert back.outcome_probabilities == res.outcome_probabilities
    assert back.metadata == res.metadata


def test_result_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidParameterError):
        SimulationResult.load(path)
