import math

import numpy as np
import pytest

from fluxcascade.field import FieldSequence, Grid, ScalarField, Snapshot
from fluxcascade.solver import taylor_green, taylor_green_pressure

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def grid32():
    return Grid(32, TWO_PI)


@pytest.fixture(scope="session")
def grid64():
    return Grid(64, TWO_PI)


def tg_sequence(grid, nu=0.1, T=0.5, m=33):
    snaps = []
    for t in np.linspace(0.0, 2 * T, m):
        t = float(t)
        snaps.append(Snapshot(t, taylor_green(grid, t, nu), taylor_green_pressure(grid, t, nu)))
    return FieldSequence(snaps, T, nu)


def steady_sequence(velocity, pressure=None, T=1.0, nu=0.1, m=9, pressure_gradient=None):
    g = velocity.grid
    p = pressure if pressure is not None else ScalarField(g, np.zeros(g.shape))
    snaps = [Snapshot(float(t), velocity, p, pressure_gradient) for t in np.linspace(0, 2 * T, m)]
    return FieldSequence(snaps, T, nu)


@pytest.fixture(scope="session")
def solver_run32():
    """Short decaying random run at 32^3, shared by the pipeline tests."""
    from fluxcascade.solver import SolverConfig, evolve
    g = Grid(32, TWO_PI)
    cfg = SolverConfig(nu=0.1, dt=0.02, n_steps=256, grid=g,
                       initial={"type": "random", "k0": 4, "seed": 3}, snapshot_every=2)
    return evolve(cfg)


# --- acceptance summary -------------------------------------------------------------------

ACCEPTANCE: list = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    """Log one acceptance line; the caller still asserts ``ok``."""
    ACCEPTANCE.append((criterion, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {crit}: {detail}")
