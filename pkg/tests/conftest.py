import numpy as np
import pytest

from ibmg.grid import GridGeometry
from ibmg.ib import FiberMesh

ACCEPTANCE_LINES: list[str] = []


def circle_mesh(center=(0.5, 0.5), r=0.2, M1=24, M2=2, w=0.05, periodic=True):
    """Small annulus usable on coarse test grids."""
    ds = 2 * np.pi * r / M1
    s1 = ds * np.arange(M1)
    s2 = np.linspace(0.0, w, M2) if M2 > 1 else np.zeros(1)
    S1, S2 = np.meshgrid(s1, s2, indexing="ij")
    X = np.stack([center[0] + (r + S2) * np.cos(S1 / r), center[1] + (r + S2) * np.sin(S1 / r)], axis=-1)
    return FiberMesh(X, ds, periodic)


@pytest.fixture
def g8():
    return GridGeometry.unit_square(8)


@pytest.fixture
def g16():
    return GridGeometry.unit_square(16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
