import numpy as np
import pytest

from pide_lab.galerkin_space import Domain1D
from pide_lab.stability_lab import ExactSolution

_ACCEPTANCE = []


def record_acceptance(criterion, passed, detail=""):
    _ACCEPTANCE.append((criterion, bool(passed), detail))


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {crit}: {detail}")


@pytest.fixture
def unit():
    return Domain1D(0.0, 1.0)


def sine_exact():
    pi = np.pi
    e = lambda t: np.exp(-t)
    return ExactSolution(
        u=lambda t, x: e(t) * np.sin(pi * x),
        du_dt=lambda t, x: -e(t) * np.sin(pi * x),
        d2u_dt2=lambda t, x: e(t) * np.sin(pi * x),
        d3u_dt3=lambda t, x: -e(t) * np.sin(pi * x),
        du_dx=lambda t, x: pi * e(t) * np.cos(pi * x),
    )


@pytest.fixture
def sine():
    return sine_exact()
