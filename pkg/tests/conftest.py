"""Shared fixtures: manufactured case, mesh sequences and a benign mixing config."""
import time
from dataclasses import dataclass

import numpy as np
import pytest

from sosm.assembly import Discretization, interpolate_coefficients
from sosm.cases import MixingConfig
from sosm.mesh import unit_square_mesh
from sosm.verify import mms_case, run_mms

MMS_LEVELS = (4, 8, 16, 32)

# Ideal-solution mixing parameters whose scaled viscosity is of order one, so
# the Picard loop converges quickly; used to exercise plumbing only.
BENIGN_MIXING = dict(A12=0.0, A21=0.0, D12=2.1e-7, eta=6e7, zeta=1e4, h=5e-4)


@pytest.fixture(scope="session")
def case():
    return mms_case()


@dataclass
class MMSSequence:
    runs: list
    seconds: float

    @property
    def records(self):
        return [r.record for r in self.runs]


def _mms_sequence(case, family):
    start = time.perf_counter()
    runs = [run_mms(n, family=family, case=case) for n in MMS_LEVELS]
    return MMSSequence(runs, time.perf_counter() - start)


@pytest.fixture(scope="session")
def mms_runs_family1(case):
    return _mms_sequence(case, 1)


@pytest.fixture(scope="session")
def mms_runs_family2(case):
    return _mms_sequence(case, 2)


@pytest.fixture(scope="session")
def benign_config():
    return MixingConfig(**BENIGN_MIXING)


@pytest.fixture(scope="session")
def benign_mixing(benign_config):
    from sosm.cases import run_mixing

    return run_mixing(benign_config)


def coefficient_state(case, n=4, family=1):
    """Discretization and coefficient state sampled from the exact concentrations."""
    mesh = unit_square_mesh(n)
    disc = Discretization(mesh, case.n, family)
    state = interpolate_coefficients(case.exact["c"], case.model, disc)
    return disc, state


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_acceptance_lines = []


def record_criterion(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    _acceptance_lines.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_acceptance_lines, key=lambda t: t[0]):
        terminalreporter.write_line(line)
