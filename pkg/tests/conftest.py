import math

import numpy as np
import pytest

from nscrit import io, solver
from nscrit.cylinders import Trajectory
from nscrit.spectral_core import Grid, ScalarField, VectorField

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def sin_field(grid: Grid, m: int = 1, axis: int = 0) -> ScalarField:
    x = grid.mesh()[axis]
    return ScalarField.from_values(grid, np.sin(m * grid.k_unit * x))


def constant_trajectory(grid: Grid, c, times=None) -> Trajectory:
    """Steady u = c, pi = 0: an exact solution on the torus."""
    times = np.linspace(-1.0, 0.0, 21) if times is None else times
    coeffs = np.zeros((3,) + (grid.n,) * 3, dtype=complex)
    coeffs[:, 0, 0, 0] = c
    u = VectorField(grid, coeffs)
    return Trajectory(times, [u] * len(times), [ScalarField.zeros(grid)] * len(times))


def zero_trajectory(grid: Grid, times=None) -> Trajectory:
    return constant_trajectory(grid, (0.0, 0.0, 0.0), times)


@pytest.fixture(scope="session")
def grid16():
    return Grid(16)


@pytest.fixture(scope="session")
def grid32():
    return Grid(32)


@pytest.fixture(scope="session")
def tg_window(tmp_path_factory):
    """Taylor-Green on [-0.7, 0] at N=32, written to disk and read back."""
    g = Grid(32)
    cfg = solver.SolverConfig(g, dt=1e-3, T=0.7, stride=10, t_start=-0.7)
    traj = solver.simulate(solver.taylor_green(g, t=-0.7), cfg)
    d = tmp_path_factory.mktemp("tg") / "traj"
    io.write_trajectory(d, traj)
    return io.read_trajectory(d)


@pytest.fixture(scope="session")
def tg_small():
    """Taylor-Green on [-0.3, 0] at N=16 for quick criterion tests."""
    g = Grid(16)
    cfg = solver.SolverConfig(g, dt=2e-3, T=0.3, stride=5, t_start=-0.3)
    return solver.simulate(solver.taylor_green(g, t=-0.3), cfg)


@pytest.fixture(scope="session")
def ball_volume():
    return lambda r: 4 * math.pi / 3 * r**3
