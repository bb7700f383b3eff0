import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_network
from kpoanneal.config import SimulationSettings, network_to_config, sweep_from_config
from kpoanneal.errors import ConfigError, InvalidParameterError
from kpoanneal.harness import (PointComparison, emit_figure_data, estimate_transition,
                               initial_state, load_sweep_results, load_table, merge_sweeps,
                               run_single, run_sweep, simulate, source_hash)
from kpoanneal.alpha import build_alpha_trajectory
from kpoanneal.model import ScheduleSpec, mhz


def linear_tables(xs, x0, slope=0.1):
    out = []
    for x in xs:
        pa = min(max(0.5 - slope * (x - x0), 0.0), 1.0)
        out.append({"++": pa, "+-": 1.0 - pa})
    return out


# ---------------------------------------------------------------- transitions

@given(x0=st.floats(-9.5, -2.5), seed=st.integers(0, 2**32 - 1))
def test_transition_of_linear_data_is_exact_and_order_free(x0, seed):
    xs = np.linspace(-10, -2, 9)
    tables = linear_tables(xs, x0)
    perm = np.random.default_rng(seed).permutation(len(xs))
    est = estimate_transition(xs[perm], [tables[i] for i in perm])
    assert est.found
    assert (est.state_a, est.state_b) == ("++", "+-")
    assert est.location == pytest.approx(x0, abs=1e-9)
    assert est.bracket[0] <= est.location <= est.bracket[1]


def test_transition_absent_and_too_short():
    xs = [0.0, 1.0, 2.0, 3.0]
    flat = [{"++": 0.8, "+-": 0.2}] * 4
    assert not estimate_transition(xs, flat).found
    # a dip that never crosses gives the no-transition marker too
    dip = [{"a": 0.9, "b": 0.1}, {"a": 0.6, "b": 0.4}, {"a": 0.7, "b": 0.3}, {"a": 0.8, "b": 0.2}]
    assert estimate_transition(xs, dip, "a", "b").location is None
    with pytest.raises(InvalidParameterError):
        estimate_transition(xs[:3], flat[:3])
    with pytest.raises(InvalidParameterError):
        estimate_transition(xs, flat[:3])


def test_transition_stderr_propagation():
    xs = [0.0, 1.0, 2.0, 3.0]
    tables = linear_tables(xs, 1.5, slope=0.2)
    ses = [{"++": 0.01, "+-": 0.01}] * 4
    est = estimate_transition(xs, tables, stderrs=ses)
    # P_a - P_b at the bracketing points x = 1 and x = 2
    d1, d2 = 0.2, -0.2
    g1 = -d2 / (d1 - d2) ** 2
    g2 = d1 / (d1 - d2) ** 2
    assert est.stderr == pytest.approx(math.hypot(g1 * 0.02, g2 * 0.02))


def test_point_agreement():
    def point(ml):
        return PointComparison(0, {}, {}, {}, {}, ml, {})
    assert point({"spin": ("++", False), "fock_master": ("++", False)}).agreement is True
    assert point({"spin": ("++", False), "fock_master": ("+-", False)}).agreement is False
    assert point({"spin": ("++", False)}).agreement is None


# ---------------------------------------------------------------- single runs

def test_initial_states():
    net = make_network(n=2)
    spin = initial_state("spin", net)
    assert np.allclose(spin, np.full(4, 0.5))
    fock = initial_state("fock_master", net, (3, 4))
    assert fock[0] == 1 and np.count_nonzero(fock) == 1 and fock.shape == (12,)


def test_ideal_single_kpo_is_symmetric():
    result = run_single("single_kpo_ideal", "spin")
    probs = result.outcome_probabilities
    assert probs["+"] == pytest.approx(0.5, abs=1e-6)
    assert probs["-"] == pytest.approx(0.5, abs=1e-6)
    assert result.most_likely()[1] is True


def test_drive_sign_mirrors_outcomes():
    plus = simulate(make_network(drive=2.0), "spin").outcome_probabilities
    minus = simulate(make_network(drive=-2.0), "spin").outcome_probabilities
    assert plus["+"] == pytest.approx(minus["-"], abs=1e-7)
    assert abs(plus["+"] - plus["-"]) > 0.05


def test_unknown_method_and_missing_key(tmp_path):
    with pytest.raises(InvalidParameterError):
        simulate(make_network(), "exact")
    tree = network_to_config(make_network())
    del tree["schedule"]["t_r_us"]
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(tree))
    with pytest.raises(ConfigError, match=r"schedule\.t_r_us"):
        run_single(path, "spin")


def test_fock_master_result_metadata(tmp_path):
    net = make_network(drive=1.0, kappa=1.0)
    result = simulate(net, "fock_master", SimulationSettings(fock_dims=(14,)))
    assert result.metadata["fock_dims"] == [14]
    assert 0 <= result.metadata["mean_readout_leakage"] < 0.2
    assert sum(result.outcome_probabilities.values()) == pytest.approx(1.0)
    out = tmp_path / "r.npz"
    result.save(out)
    assert result.metadata["most_likely"] == result.most_likely()[0]


# ---------------------------------------------------------------- sweeps

def small_sweep(methods=("spin",), drives=(-3.0, -1.0, 1.0, 3.0)):
    base = network_to_config(make_network(kappa=1.0))
    base["simulation"] = {"fock_dims": [14]}
    return sweep_from_config({
        "name": "small", "base": base, "methods": list(methods), "seed": 3,
        "axes": [{"path": "kpos[0].drive_rescaled_mhz", "values": list(drives)}]})


@pytest.fixture(scope="module")
def spin_sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("spin_sweep")
    outcome = run_sweep(small_sweep(), out)
    assert outcome.ok
    return out, outcome


def test_sweep_writes_index_and_report(spin_sweep_dir):
    out, outcome = spin_sweep_dir
    index = json.loads((out / "sweep.json").read_text())
    assert len(index["points"]) == 4
    report = json.loads((out / "report.json").read_text())
    assert report["transitions"][0]["method"] == "spin"
    est = outcome.report.transition("spin")
    assert est.found and -1.0 < est.location < 1.0
    points, results = load_sweep_results(out)
    assert len(results) == 4
    for (i, _), res in results.items():
        assert res.outcome_probabilities == outcome.results[(i, "spin")].outcome_probabilities


def test_sweep_resume_reuses_cache(spin_sweep_dir):
    out, first = spin_sweep_dir
    files = sorted((out / "points").iterdir())
    stamps = [f.stat().st_mtime_ns for f in files]
    again = run_sweep(small_sweep(), out)
    assert [f.stat().st_mtime_ns for f in files] == stamps
    for key, res in again.results.items():
        assert res.outcome_probabilities == first.results[key].outcome_probabilities
    assert len(source_hash()) == 16


def test_sweep_independent_of_jobs(spin_sweep_dir, tmp_path):
    _, first = spin_sweep_dir
    parallel = run_sweep(small_sweep(), tmp_path, jobs=2)
    for key, res in parallel.results.items():
        assert res.outcome_probabilities == first.results[key].outcome_probabilities


def test_sweep_records_failures(tmp_path):
    sweep = small_sweep()
    sweep = sweep.__class__(**{**sweep.__dict__,
                               "axes": (("kpos[0].kappa_mhz", (1.0, -1.0)),)})
    outcome = run_sweep(sweep, tmp_path)
    assert (1, "spin") in outcome.failures and (0, "spin") in outcome.results
    index = json.loads((tmp_path / "sweep.json").read_text())
    assert "kappa_mhz" in index["points"][1]["errors"]["spin"]


def test_merge_spin_and_fock(spin_sweep_dir, tmp_path):
    spin_dir, _ = spin_sweep_dir
    fock = run_sweep(small_sweep(methods=("fock_master",), drives=(-3.0, 3.0)), tmp_path)
    assert fock.ok
    report = merge_sweeps([spin_dir, tmp_path])
    assert len(report.points) == 4
    both = [p for p in report.points if len(p.tables) == 2]
    assert len(both) == 2 and all(p.agreement for p in both)


# ---------------------------------------------------------------- figure tables

def test_fig5_schedule_table(tmp_path):
    sched = ScheduleSpec(0.4, 0.1, 0.6, 0.4, mhz(-20), drive_exponent=1.34)
    net = make_network(schedule=sched)
    path = emit_figure_data("fig5", tmp_path / "fig5.csv", network=net)
    rows = {round(r["t_us"], 12): r for r in load_table(path)}
    assert rows[0.0]["detuning_mhz"] == pytest.approx(-20.0)
    assert rows[0.0]["pump_fraction"] == 0.0
    assert rows[0.4]["pump_fraction"] == pytest.approx(1.0)
    assert rows[0.4]["detuning_mhz"] == pytest.approx(0.0, abs=1e-12)
    assert rows[0.5]["drive_fraction"] == pytest.approx(1.0)
    assert rows[1.4]["drive_fraction"] == 0.0
    assert rows[0.2]["drive_fraction"] == pytest.approx(0.5 ** 1.34)


def test_emit_is_deterministic(tmp_path, spin_sweep_dir):
    out, _ = spin_sweep_dir
    report = merge_sweeps([out])
    a = emit_figure_data("fig3", tmp_path / "a.csv", report=report)
    b = emit_figure_data("fig3", tmp_path / "b.csv", report=report)
    assert a.read_bytes() == b.read_bytes()
    rows = load_table(a)
    assert len(rows) == 4 * 2
    for x in (-3.0, 3.0):
        assert sum(r["probability"] for r in rows if r["sweep_value"] == x) == pytest.approx(1)
    heat = load_table(emit_figure_data("fig2", tmp_path / "h.csv", report=report))
    assert {r["most_likely_state"] for r in heat} <= {"+", "-"}


def test_alpha_table_round_trip(tmp_path):
    net = make_network()
    alpha = build_alpha_trajectory(net, method="analytic")
    rows = load_table(emit_figure_data("alpha", tmp_path / "alpha.csv", alpha=alpha))
    assert len(rows) == len(alpha.times)
    assert [r["alpha_0"] for r in rows] == [float(a) for a in alpha.alphas[:, 0]]


def test_emit_requires_inputs(tmp_path):
    for figure in ("fig2", "fig3", "fig4", "fig5", "alpha"):
        with pytest.raises(InvalidParameterError):
            emit_figure_data(figure, tmp_path / "x.csv")
    with pytest.raises(InvalidParameterError):
        emit_figure_data("fig9", tmp_path / "x.csv")
