import numpy as np
import pytest

from ugdyn.cnf import encode
from ugdyn.dynamics import DynamicsConfig, SystemState, TrajectoryRecord
from ugdyn.instance import TwoLinInstance

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the full desk-scale sweeps")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    def _report(criterion, ok, detail):
        line = f"CRITERION {criterion}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return _report


@pytest.fixture
def three_cycle():
    # x0 = x1 + 1, x1 = x2 + 1, x0 = x2 + 1 over Z_2: best is 2 of 3
    return TwoLinInstance(2, 3, ((0, 1, 1), (1, 2, 1), (0, 2, 1)))


@pytest.fixture
def consistent_cycle():
    return TwoLinInstance(2, 3, ((0, 1, 1), (1, 2, 1), (0, 2, 0)))


def corner_x_spins(assignment, k):
    xs = -np.ones(len(assignment) * k)
    xs[np.arange(len(assignment)) * k + np.asarray(assignment)] = 1.0
    return xs


def make_record(instance, t, xs):
    """Synthetic x-only record from sampled x-block spins."""
    formula = encode(instance)
    t = np.asarray(t, dtype=float)
    xs = np.asarray(xs, dtype=float)
    n = t.size
    decoded = np.argmax(xs.reshape(n, instance.n_x, instance.k), axis=-1)
    eq = instance.eq_array
    sat = decoded[:, eq[:, 0]] == (decoded[:, eq[:, 1]] + eq[:, 2]) % instance.k
    zeros = np.zeros(n)
    final = SystemState(np.zeros(formula.N), np.zeros(formula.M), float(t[-1]))
    return TrajectoryRecord(t, xs, np.arange(formula.n_x_spins), zeros, zeros, zeros,
                            decoded, sat, final, DynamicsConfig(), max_abs_s=np.abs(xs).max(1),
                            min_K=zeros, stats={})
