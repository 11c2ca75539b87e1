import numpy as np
import pytest

from sosreach.moments import DisturbanceModel
from sosreach.system import SystemModel

CASE1_F = ["0.3*x1 + 0.5*x2^3 + w1", "0.8*x2 + w2"]
CASE2_F = ["x1 + 0.05*(-1.1*x1 + 0.15*x1*x2 - 0.005*x1^3 + w1*x1)",
           "x2 + 0.05*(-0.9*x2 + 0.12*x1^2 - 0.006*x2^3 + w2*x2)"]
DISK = ["x1^2 + x2^2 - 1"]


def case1_system():
    return SystemModel.from_strings(CASE1_F, DisturbanceModel.uniform(1, 1), DISK)


def case2_system():
    return SystemModel.from_strings(CASE2_F, DisturbanceModel.uniform(0.5, 0.5), DISK)


def example1_system():
    return SystemModel.from_strings(["x1 + x1^2*w1"], DisturbanceModel.uniform(1), ["x1^2 - 1"])


def zero_map_system():
    """f = 0 with a 2-D uniform disturbance on [-1, 1]^2 and the unit disk as target."""
    return SystemModel.from_strings(["0", "0"], DisturbanceModel.uniform(1, 1), DISK, n=2)


@pytest.fixture(scope="session")
def case1():
    return case1_system()


@pytest.fixture(scope="session")
def example1():
    return example1_system()


@pytest.fixture(scope="session")
def zero_map():
    return zero_map_system()


@pytest.fixture(scope="session")
def case1_drift(case1):
    from sosreach.drift import synthesize_drift

    res = synthesize_drift(case1, 6)
    assert res.feasible, res.summary()
    return res.certificate


def _quadrature_expectation_reference(p, d) -> dict:
    """Per-coordinate Gauss-Legendre quadrature of every x-monomial's w-coefficient."""
    n, m = p.ctx.n, p.ctx.m
    nodes, weights = np.polynomial.legendre.leggauss(8)
    out: dict = {}
    for mono, c in p.items():
        val = c
        for j, k in enumerate(mono[n:]):
            cj = d.params[j]
            val *= float(np.sum(weights / 2 * (cj * nodes) ** k))
        key = mono[:n] + (0,) * m
        out[key] = out.get(key, 0.0) + val
    return out


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion; call the result with (number, title)."""
    rows = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    class Recorder:
        def __init__(self):
            self.label = None
            self.detail = ""

        def __call__(self, number, title):
            self.label = f"criterion {number}: {title}"
            return self

    rec = Recorder()
    yield rec
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    line = f"{'PASS' if ok else 'FAIL'} {rec.label}" + (f" [{rec.detail}]" if rec.detail else "")
    rows.append(line)
    with capsys.disabled():
        print("\n" + line)


@pytest.hookimpl(wrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(_ACCEPTANCE_KEY, [])
    if rows:
        terminalreporter.section("acceptance criteria")
        for line in rows:
            terminalreporter.write_line(line)
