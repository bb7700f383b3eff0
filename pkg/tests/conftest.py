import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kpoanneal.config import load_network
from kpoanneal.model import CouplingSpec, KpoSpec, NetworkSpec, ScheduleSpec, mhz

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def dense_annihilator(d):
    """Independent ladder operator: entry (n-1, n) = sqrt(n)."""
    a = np.zeros((d, d), dtype=complex)
    for n in range(1, d):
        a[n - 1, n] = math.sqrt(n)
    return a


def embed(op, site, dims):
    mats = [op if j == site else np.eye(d) for j, d in enumerate(dims)]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


@pytest.fixture(scope="session")
def two_kpo():
    return load_network("two_kpo")[0]


@pytest.fixture(scope="session")
def four_kpo():
    return load_network("four_kpo")[0]


@pytest.fixture
def small_schedule():
    return ScheduleSpec(t_s=0.2, t_sp=0.05, t_rd=0.1, t_r=0.1, delta_initial=mhz(-20),
                        grid_points=30)


def make_network(n=1, pump=20.0, kerr=-12.6, drive=0.0, kappa=0.0, gamma_khz=0.0,
                 couplings=(), schedule=None):
    schedule = schedule or ScheduleSpec(0.2, 0.05, 0.1, 0.1, mhz(-20), grid_points=30)
    kpos = [KpoSpec(mhz(kerr), mhz(pump), mhz(drive), mhz(kappa)) for _ in range(n)]
    return NetworkSpec(kpos, [CouplingSpec(k, s, mhz(g)) for k, s, g in couplings],
                       2 * math.pi * gamma_khz * 1e-3, schedule)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
