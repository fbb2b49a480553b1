"""Fast self-checks against closed-form oracles, grouped by module.

Each check returns (measured error, tolerance); it passes when the error is
at most the tolerance.  The command-line ``verify`` runs them all.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from . import criteria, cylinders, io, norms, solver
from .spectral_core import (
    Grid,
    ScalarField,
    VectorField,
    band_limited_random,
    heat_semigroup,
    rescale_field,
)


@dataclass(frozen=True)
class Check:
    module: str
    operation: str
    run: Callable[[], tuple[float, float]]


@dataclass
class CheckResult:
    module: str
    operation: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.module}.{self.operation}: error {self.error:.3e} "
                f"(tolerance {self.tolerance:.1e})")


def _sin_field(grid: Grid, m: int = 1) -> ScalarField:
    x1, _, _ = grid.mesh()
    return ScalarField.from_values(grid, np.sin(m * grid.k_unit * x1))


def besov_single_mode_oracle(s: float, p: float, q: float, kabs: float) -> float:
    """Besov norm of sin(k x1) on T^3 from the heat characterization.

    ||e^{tau Lap} sin||_p = e^{-tau k^2} c_p with c_p = ||sin||_{L^p(T^3)}; the
    tau-integral over (0, inf) is a Gamma function.
    """
    c_p = (2 * math.pi) ** (3 / p) * (
        special.gamma((p + 1) / 2) / (math.sqrt(math.pi) * special.gamma(p / 2 + 1))
    ) ** (1 / p)
    a = -s / 2
    if math.isinf(q):
        return c_p * (a / (math.e * kabs**2)) ** a
    return c_p * (special.gamma(a * q) / (q * kabs**2) ** (a * q)) ** (1 / q)


def bmo_minus1_sin_oracle(radii, centers_x1) -> float:
    """sup over the given balls of (|B|^{-1} int_0^{R^2} int_B |e^{t Lap} sin x1|^2)^{1/2}.

    The ball average of sin^2(x1) over B(a, R) is (1 - cos(2a) j(2R)) / 2 with
    j(z) = 3 (sin z - z cos z) / z^3, and the t-integral is (1 - e^{-2R^2}) / 2.
    """
    best = 0.0
    for R in radii:
        j = 3 * (math.sin(2 * R) - 2 * R * math.cos(2 * R)) / (2 * R) ** 3
        for a in centers_x1:
            avg = (1 - math.cos(2 * a) * j) / 2
            best = max(best, avg * (1 - math.exp(-2 * R * R)) / 2)
    return math.sqrt(best)


def _check_transform():
    g = Grid(16)
    f = band_limited_random(g, 4, np.random.default_rng(3))
    back = ScalarField.from_values(g, f.values)
    h = heat_semigroup(_sin_field(g, 2), 0.3).values
    exact = np.exp(-4 * 0.3) * _sin_field(g, 2).values
    return float(max(np.abs(back.coeffs - f.coeffs).max(), np.abs(h - exact).max())), 1e-12


def _check_besov_default():
    g = Grid(32)
    params = norms.BesovParams(s=-0.5, p=4.0, q=4.0)
    got = norms.besov_norm(_sin_field(g), params)
    exact = besov_single_mode_oracle(-0.5, 4.0, 4.0, 1.0)
    return abs(got - exact) / exact, 1e-2


def _check_besov_max():
    g = Grid(32)
    params = norms.BesovParams(s=-0.5, p=4.0, q=float("inf"))
    got = norms.besov_norm(_sin_field(g), params, refine=True)
    exact = besov_single_mode_oracle(-0.5, 4.0, float("inf"), 1.0)
    return abs(got - exact) / exact, 1e-6


def _check_bmo_minus1():
    g = Grid(32)
    got = norms.bmo_minus1_norm(_sin_field(g))
    exact = bmo_minus1_sin_oracle(norms.default_radii(g), g.x1d[::4])
    return abs(got - exact) / exact, 2e-2


def _tg_traj(n=16, dt=1e-3, steps=100, stride=10, t_start=-0.1):
    g = Grid(n)
    cfg = solver.SolverConfig(g, dt=dt, T=steps * dt, stride=stride, t_start=t_start)
    return solver.simulate(solver.taylor_green(g, t=t_start), cfg)


def _check_solver_tg():
    tr = _tg_traj(steps=50, t_start=0.0)
    g = tr.grid
    exact = solver.taylor_green(g, t=tr.times[-1])
    err = np.sqrt(g.volume * np.sum(np.abs(tr.velocity[-1].coeffs - exact.coeffs) ** 2))
    return float(err), 1e-6


def _check_pressure_tg():
    g = Grid(16)
    p = solver.pressure_from_velocity(solver.taylor_green(g))
    return float(np.abs(p.values - solver.taylor_green_pressure(g).values).max()), 1e-12


def _check_scaling():
    tr = _tg_traj(steps=100, stride=5)
    rows = criteria.scaling_invariance_report(tr, [2], [0.1], center=(0.3, 0.2, 0.1))
    return max(r.rel_error for r in rows), 1e-6


def _check_cylinder_constant():
    g = Grid(16)
    c = np.zeros((3, 16, 16, 16), dtype=complex)
    c[:, 0, 0, 0] = (0.3, -0.2, 0.1)
    u = VectorField(g, c)
    times = np.linspace(-0.1, 0.0, 11)
    tr = cylinders.Trajectory(times, [u] * 11, [ScalarField.zeros(g)] * 11)
    r = 0.3
    q = cylinders.cylinder_quantities(tr, cylinders.ParabolicCylinder((1.0, 2.0, 3.0), 0.0, r))
    speed = math.sqrt(0.14)
    exact = 4 * math.pi / 3 * speed**3 * r**3
    return abs(q.C - exact) / exact, 1e-12


def _check_local_energy():
    g = Grid(16)
    u0 = solver.random_velocity(g, 2, np.random.default_rng(1), amplitude=1.0)
    tr = solver.simulate(u0, solver.SolverConfig(g, dt=2e-3, T=0.12, stride=1))
    phi, dphi = cylinders.bump_test_function(g, tr.times)
    te = cylinders.local_energy_terms(tr, phi, tr.times[-1], dphi)
    return abs(te.residual) / te.scale, 1e-3


def _check_limit_d():
    g = Grid(16)
    u0 = solver.random_velocity(g, 3, np.random.default_rng(2), planar=True)
    tr = solver.simulate(u0, solver.SolverConfig(g, dt=2e-3, T=0.02, stride=2))
    res = solver.limit_system_residuals(solver.limit_states_from_trajectory(tr), tr.times)
    return res.r_d, 0.0


def _check_gates():
    table = [
        (criteria.gkt_vorticity_admissible, 1, float("inf"), False),
        (criteria.theorem12_admissible, 3, float("inf"), True),
        (criteria.theorem12_admissible, 2, 2, False),
        (criteria.type1_admissible, float("inf"), 2, True),
        (criteria.type1_admissible, 6, 6, True),
        (criteria.type1_admissible, 3, float("inf"), True),
        (criteria.type1_admissible, 3, 4, False),
    ]
    wrong = sum(gate(p, q) != expect for gate, p, q, expect in table)
    return float(wrong), 0.0


def _check_snapshot():
    rng = np.random.default_rng(4)
    fields = rng.standard_normal((2, 8, 8, 8)) + 1j * rng.standard_normal((2, 8, 8, 8))
    snap = io.Snapshot(8, 2 * math.pi, 0.25, 1.0, fields)
    back = io.decode_snapshot(io.encode_snapshot(snap))
    same = back.fields.tobytes() == snap.fields.astype("<c16").tobytes()
    return (0.0 if same else 1.0), 0.0


def _check_rescale():
    g = Grid(16)
    f = _sin_field(g)
    r = rescale_field(f, 2, degree=1)
    return float(np.abs(r.values - 2 * _sin_field(g, 2).values).max()), 1e-12


def _check_ball_volume():
    x1, x2, x3, w = cylinders.ball_rule((0.0, 0.0, 0.0), 0.7)
    exact = 4 * math.pi / 3 * 0.7**3
    return abs(w.sum() - exact) / exact, 1e-13


CHECKS = [
    Check("spectral_core", "transform+heat_semigroup", _check_transform),
    Check("spectral_core", "rescale", _check_rescale),
    Check("norms", "besov_norm(q=p)", _check_besov_default),
    Check("norms", "besov_norm(q=inf, refined)", _check_besov_max),
    Check("norms", "bmo_minus1_norm", _check_bmo_minus1),
    Check("cylinders", "ball_rule", _check_ball_volume),
    Check("cylinders", "cylinder_quantities", _check_cylinder_constant),
    Check("cylinders", "local_energy_residual", _check_local_energy),
    Check("solver", "pressure_from_velocity", _check_pressure_tg),
    Check("solver", "simulate(taylor_green)", _check_solver_tg),
    Check("solver", "limit_system_residuals", _check_limit_d),
    Check("criteria", "scaling_invariance_report", _check_scaling),
    Check("criteria", "exponent_gates", _check_gates),
    Check("cli_io", "snapshot_round_trip", _check_snapshot),
]


def run_checks(module: str | None = None) -> list[CheckResult]:
    selected = [c for c in CHECKS if module is None or c.module == module]
    if module is not None and not selected:
        known = sorted({c.module for c in CHECKS})
        raise ValueError(f"unknown module {module!r}; choose from {known}")
    out = []
    for c in selected:
        err, tol = c.run()
        out.append(CheckResult(c.module, c.operation, float(err), float(tol)))
    return out
