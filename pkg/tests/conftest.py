import numpy as np
import pytest

from uav_scc.control import lqr_gain
from uav_scc.dynamics import build_dynamics


@pytest.fixture(scope="session")
def model():
    return build_dynamics(1.0, 0.01, 0.25, 0.25)


@pytest.fixture(scope="session")
def gain(model):
    return lqr_gain(model)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def symmetric_beacons(radius=2000.0, center=(0.0, 0.0)):
    ang = np.deg2rad([90.0, 210.0, 330.0])
    return np.asarray(center) + radius * np.column_stack([np.cos(ang), np.sin(ang)])


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one ``PASS``/``FAIL`` line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def add(number: int, title: str, ok: bool, detail: str = ""):
        lines.append((number, f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}"))
        return ok
    return add


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
