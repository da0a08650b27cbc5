import numpy as np
import pytest

from hmwm.designer import DesignSpec, design_bank
from hmwm.harness import attach_partition, load_config, simulate
from hmwm.numerics import make_rng

# published reference unobservable block (one random design)
REF_A_WU = np.diag([0.3908, 0.6076])
REF_B_WU = np.array([[0.1299, 0.4694], [0.5688, 0.0119]])


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def plant(cfg):
    return cfg.plant


@pytest.fixture(scope="session")
def ctrl(cfg):
    return cfg.controller()


@pytest.fixture(scope="session")
def designed(cfg, ctrl):
    """Example-scale bank (n_w=5, n_u=2, N=6) with partition, certificate, stats."""
    bank, cert = design_bank(cfg.design)
    bank, st = attach_partition(bank, cfg.plant, ctrl)
    return bank, cert, st


@pytest.fixture(scope="session")
def trace(cfg, ctrl, designed):
    bank, _, _ = designed
    return simulate(cfg.plant, ctrl, bank, 1000, make_rng(cfg.noise_seed))


@pytest.fixture
def rng():
    return make_rng(20240601)


ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Log one acceptance verdict; the lines are echoed in the terminal summary."""
    def _record(criterion: int, name: str, passed: bool, detail: str = ""):
        line = f"criterion {criterion:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append((criterion, line))
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
