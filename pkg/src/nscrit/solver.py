"""Pseudo-spectral Navier-Stokes solver on the torus and limit-system tools.

Time stepping is classical RK4 on the integrating-factor form
v = exp(nu |k|^2 t) u_hat, so the viscous term is exact.  The nonlinear term
is evaluated in rotational form u x omega, dealiased by the 2/3 rule and
Leray-projected at every stage.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.fft

from .cylinders import Trajectory, _time_derivative
from .spectral_core import (
    Grid,
    ScalarField,
    VectorField,
    band_limited_random,
    fft_workers,
    leray_project,
)

log = logging.getLogger(__name__)

CFL_LIMIT = 0.5


class CFLError(RuntimeError):
    pass


class InstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    grid: Grid
    dt: float = 1e-3
    T: float = 0.1
    viscosity: float = 1.0
    dealias: bool = True
    stride: int = 10
    t_start: float = 0.0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.T >= 0:
            raise ValueError(f"T must be nonnegative, got {self.T}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValueError(f"stride must be a positive integer, got {self.stride}")
        if not self.viscosity > 0:
            raise ValueError("viscosity must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


def _ifft(a, n):
    return scipy.fft.ifftn(a, axes=(-3, -2, -1), workers=fft_workers()).real * n**3


def _fft(a, n):
    return scipy.fft.fftn(a, axes=(-3, -2, -1), workers=fft_workers()) / n**3


def _project(grid: Grid, c: np.ndarray) -> np.ndarray:
    k = grid.k
    kdotc = (k[0] * c[0] + k[1] * c[1] + k[2] * c[2]) / grid.k2_safe
    return np.stack([c[i] - k[i] * kdotc for i in range(3)])


def _mask(grid: Grid, dealias: bool) -> np.ndarray:
    return grid.dealias_mask if dealias else grid.nyquist_mask


def convective_term(grid: Grid, c: np.ndarray, dealias: bool = True) -> np.ndarray:
    """Coefficients of (u . grad) u for velocity coefficients ``c``."""
    n = grid.n
    k = grid.k
    u = _ifft(c, n)
    out = np.empty_like(c)
    for i in range(3):
        du = _ifft(np.stack([1j * k[j] * c[i] for j in range(3)]), n)
        out[i] = _fft(np.sum(u * du, axis=0), n)
    return out * _mask(grid, dealias)


def pressure_from_velocity(u: VectorField, dealias: bool = True) -> ScalarField:
    """Mean-zero pressure solving Lap pi = -div((u . grad) u)."""
    grid = u.grid
    nl = convective_term(grid, u.coeffs, dealias)
    k = grid.k
    div = 1j * (k[0] * nl[0] + k[1] * nl[1] + k[2] * nl[2])
    pi = div / grid.k2_safe
    pi[0, 0, 0] = 0
    return ScalarField(grid, pi)


class _HalfSpectrum:
    """Wavenumbers and masks on the real-FFT half spectrum of a grid."""

    def __init__(self, grid: Grid):
        n = grid.n
        self.grid = grid
        self.m = n // 2 + 1
        k = grid.k1d
        k3 = grid.k_unit * np.arange(self.m)
        self.k = (k[:, None, None], k[None, :, None], k3[None, None, :])
        self.k2 = self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2
        self.k2_safe = self.k2.copy()
        self.k2_safe[0, 0, 0] = 1.0
        self.nyquist = grid.nyquist_mask[:, :, : self.m]
        self.dealias = grid.dealias_mask[:, :, : self.m]
        # modes k3 = 0 appear once in the full spectrum, the others twice
        self.weight = np.where(np.arange(self.m) == 0, 1.0, 2.0)[None, None, :]

    def to_values(self, c: np.ndarray) -> np.ndarray:
        n = self.grid.n
        return scipy.fft.irfftn(c * n**3, s=(n, n, n), axes=(-3, -2, -1), workers=fft_workers())

    def from_values(self, v: np.ndarray) -> np.ndarray:
        n = self.grid.n
        return scipy.fft.rfftn(v, axes=(-3, -2, -1), workers=fft_workers()) / n**3

    def to_full(self, c: np.ndarray) -> np.ndarray:
        return _fft(self.to_values(c), self.grid.n)

    def from_full(self, c: np.ndarray) -> np.ndarray:
        return c[..., : self.m]

    def project(self, c: np.ndarray) -> np.ndarray:
        k = self.k
        kdotc = (k[0] * c[0] + k[1] * c[1] + k[2] * c[2]) / self.k2_safe
        return np.stack([c[i] - k[i] * kdotc for i in range(3)])

    def energy(self, c: np.ndarray) -> tuple[float, float]:
        """||u||_2^2 and ||grad u||_2^2 via Parseval."""
        a2 = np.sum(np.abs(c) ** 2, axis=0) * self.weight
        vol = self.grid.volume
        return float(vol * a2.sum()), float(vol * np.sum(self.k2 * a2))

    def rhs(self, c: np.ndarray, dealias: bool, forcing_c=None):
        """P[u x omega] (+ P f) and max|u| of the input state."""
        k1, k2, k3 = self.k
        w = np.stack([
            1j * (k2 * c[2] - k3 * c[1]),
            1j * (k3 * c[0] - k1 * c[2]),
            1j * (k1 * c[1] - k2 * c[0]),
        ])
        u = self.to_values(c)
        om = self.to_values(w)
        cross = np.stack([
            u[1] * om[2] - u[2] * om[1],
            u[2] * om[0] - u[0] * om[2],
            u[0] * om[1] - u[1] * om[0],
        ])
        nl = self.from_values(cross) * (self.dealias if dealias else self.nyquist)
        if forcing_c is not None:
            nl = nl + forcing_c
        speed = float(np.sqrt(np.sum(u**2, axis=0)).max())
        return self.project(nl) * self.nyquist, speed


_HALF: dict = {}


def _half(grid: Grid) -> _HalfSpectrum:
    if grid not in _HALF:
        _HALF[grid] = _HalfSpectrum(grid)
    return _HALF[grid]


def _forcing_half(h: _HalfSpectrum, forcing, t):
    if forcing is None:
        return None
    f = forcing(t)
    return h.from_full(f.coeffs if isinstance(f, VectorField) else np.asarray(f))


def _step_half(h: _HalfSpectrum, c: np.ndarray, t: float, dt: float, viscosity: float,
               dealias: bool, forcing) -> np.ndarray:
    a, speed = h.rhs(c, dealias, _forcing_half(h, forcing, t))
    cfl = dt * speed / h.grid.spacing
    if cfl > CFL_LIMIT:
        raise CFLError(
            f"advective CFL number {cfl:.3f} exceeds {CFL_LIMIT} at t={t:.6g} "
            f"(dt={dt:g}, spacing={h.grid.spacing:.4g}); reduce dt"
        )
    e_half = np.exp(-viscosity * h.k2 * dt / 2)
    e_full = e_half * e_half
    f_mid = _forcing_half(h, forcing, t + dt / 2)
    b, _ = h.rhs(e_half * (c + dt / 2 * a), dealias, f_mid)
    cc, _ = h.rhs(e_half * c + dt / 2 * b, dealias, f_mid)
    d, _ = h.rhs(e_full * c + dt * e_half * cc, dealias, _forcing_half(h, forcing, t + dt))
    new = e_full * c + dt / 6 * (e_full * a + 2 * e_half * (b + cc) + d)
    new = h.project(new) * h.nyquist
    if not np.all(np.isfinite(new)):
        raise InstabilityError(f"non-finite velocity after step at t={t + dt:.6g}")
    return new


def step_coeffs(grid: Grid, c: np.ndarray, t: float, dt: float, viscosity: float = 1.0,
                dealias: bool = True, forcing=None) -> np.ndarray:
    """One integrating-factor RK4 step on (full-layout) velocity coefficients."""
    h = _half(grid)
    return h.to_full(_step_half(h, h.from_full(c), t, dt, viscosity, dealias, forcing))


def step(u: VectorField, t: float, dt: float, viscosity: float = 1.0,
         dealias: bool = True, forcing=None) -> VectorField:
    """Advance ``u`` from time ``t`` by ``dt``."""
    c = step_coeffs(u.grid, u.coeffs, t, dt, viscosity, dealias, forcing)
    return VectorField(u.grid, c)


def _time_label(t: float) -> float:
    # suppress accumulation noise such as -0.7 + 700 * 1e-3 = 1.1e-16
    return float(np.round(t, 12))


def simulate(u0: VectorField, config: SolverConfig, forcing=None) -> Trajectory:
    """Integrate from ``u0`` and store every ``config.stride``-th step.

    The trajectory's ``history`` holds time, ||u||^2 and ||grad u||^2 at
    every step for energy bookkeeping.
    """
    grid = config.grid
    if u0.grid != grid:
        raise ValueError("initial data lives on a different grid")
    div = np.abs(_ifft(1j * sum(grid.k[i] * u0.coeffs[i] for i in range(3)), grid.n)).max()
    if div > 1e-10 * max(np.abs(u0.values).max(), 1e-300):
        raise ValueError(f"initial velocity is not divergence-free (max|div u| = {div:.2e})")
    h = _half(grid)
    c = h.from_full(u0.coeffs)
    t = _time_label(config.t_start)
    times, vel = [t], [u0]
    e, d = h.energy(c)
    hist_t, hist_e, hist_d = [t], [e], [d]
    for i in range(1, config.n_steps + 1):
        c = _step_half(h, c, t, config.dt, config.viscosity, config.dealias, forcing)
        t = _time_label(config.t_start + i * config.dt)
        e, d = h.energy(c)
        hist_t.append(t)
        hist_e.append(e)
        hist_d.append(d)
        if i % config.stride == 0:
            times.append(t)
            vel.append(VectorField(grid, h.to_full(c)))
    pre = [pressure_from_velocity(u, config.dealias) for u in vel]
    log.debug("simulated %d steps, %d snapshots", config.n_steps, len(times))
    history = {"time": np.array(hist_t), "energy": np.array(hist_e),
               "dissipation": np.array(hist_d)}
    return Trajectory(np.array(times), vel, pre, config.viscosity, history)


# ---------------------------------------------------------------- initial data

def taylor_green(grid: Grid, amplitude: float = 1.0, t: float = 0.0,
                 viscosity: float = 1.0) -> VectorField:
    """(sin x1 cos x2, -cos x1 sin x2, 0) exp(-2 nu t) for L = 2 pi."""
    x1, x2, _ = grid.mesh()
    kk = grid.k_unit
    decay = amplitude * np.exp(-2 * viscosity * kk**2 * t)
    vals = np.stack([
        np.sin(kk * x1) * np.cos(kk * x2),
        -np.cos(kk * x1) * np.sin(kk * x2),
        np.zeros_like(x1),
    ]) * decay
    return VectorField.from_values(grid, vals)


def taylor_green_pressure(grid: Grid, amplitude: float = 1.0, t: float = 0.0,
                          viscosity: float = 1.0) -> ScalarField:
    """(cos 2x1 + cos 2x2)/4, the pressure paired with ``taylor_green``."""
    x1, x2, _ = grid.mesh()
    kk = grid.k_unit
    decay = amplitude**2 * np.exp(-4 * viscosity * kk**2 * t)
    return ScalarField.from_values(grid, (np.cos(2 * kk * x1) + np.cos(2 * kk * x2)) / 4 * decay)


def random_velocity(grid: Grid, kmax: int, rng: np.random.Generator,
                    amplitude: float = 1.0, planar: bool = False) -> VectorField:
    """Random divergence-free band-limited field scaled to max|u| = amplitude.

    ``planar`` gives an x3-independent field with u3 = 0 (embedded 2D flow).
    """
    raw = band_limited_random(grid, kmax, rng, vector=True)
    c = raw.coeffs.copy()
    if planar:
        keep = (grid.mode_index == 0)[None, None, :]
        c = c * keep
        c[2] = 0
    c = _project(grid, c)
    u = VectorField(grid, c)
    peak = np.abs(u.values).max()
    return VectorField(grid, c * (amplitude / peak))


# ---------------------------------------------------------------- forcing

def _convective_exact(grid: Grid, c: np.ndarray) -> np.ndarray:
    return convective_term(grid, c, dealias=False)


class ManufacturedForcing:
    """F = d_t v + (v . grad) v - Lap v + grad pi for prescribed v(t), pi(t).

    Callable as ``F(t) -> VectorField`` so it can drive ``simulate``.
    Without an explicit ``velocity_dt`` the time derivative is a fourth-order
    central difference with step ``h``.
    """

    def __init__(self, velocity: Callable[[float], VectorField],
                 pressure: Callable[[float], ScalarField] | None = None,
                 velocity_dt: Callable[[float], VectorField] | None = None,
                 viscosity: float = 1.0, h: float = 1e-3):
        self.velocity = velocity
        self.pressure = pressure
        self.velocity_dt = velocity_dt
        self.viscosity = viscosity
        self.h = h

    def _dvdt(self, t: float) -> np.ndarray:
        if self.velocity_dt is not None:
            return self.velocity_dt(t).coeffs
        v = self.velocity
        h = self.h
        return (v(t - 2 * h).coeffs - 8 * v(t - h).coeffs
                + 8 * v(t + h).coeffs - v(t + 2 * h).coeffs) / (12 * h)

    def __call__(self, t: float) -> VectorField:
        v = self.velocity(t)
        grid = v.grid
        out = self._dvdt(t) + _convective_exact(grid, v.coeffs) + self.viscosity * grid.k2 * v.coeffs
        if self.pressure is not None:
            p = self.pressure(t).coeffs
            out = out + np.stack([1j * k * p for k in grid.k])
        return VectorField(grid, out)

    def sample(self, times: Sequence[float]) -> list[VectorField]:
        return [self(t) for t in times]


def manufactured_forcing(velocity, pressure=None, velocity_dt=None,
                         viscosity: float = 1.0) -> ManufacturedForcing:
    return ManufacturedForcing(velocity, pressure, velocity_dt, viscosity)


# ---------------------------------------------------------------- limit system

@dataclass(frozen=True, eq=False)
class LimitState:
    """Horizontal velocity (third component zero) and x3-independent pressure."""

    velocity: VectorField
    pressure: ScalarField

    def __post_init__(self) -> None:
        v = self.velocity
        grid = v.grid
        if np.abs(v.coeffs[2]).max() > 0:
            raise ValueError("limit state must have v3 identically zero")
        k = grid.k
        divh = _ifft(1j * (k[0] * v.coeffs[0] + k[1] * v.coeffs[1]), grid.n)
        vmax = max(np.abs(v.values).max(), 1e-300)
        if np.abs(divh).max() > 1e-10 * vmax:
            raise ValueError("horizontal divergence of v_h is not zero slice-wise")
        pc = self.pressure.coeffs
        off = np.abs(pc[:, :, 1:]).max() if pc.size else 0.0
        if off > 1e-12 * max(np.abs(pc).max(), 1e-300):
            raise ValueError("limit pressure depends on x3")

    @classmethod
    def from_velocity(cls, v: VectorField, pressure: ScalarField) -> "LimitState":
        c = v.coeffs.copy()
        c[2] = 0
        return cls(VectorField(v.grid, c), pressure)


def horizontal_vorticity(v: VectorField) -> ScalarField:
    """w_h = d1 v2 - d2 v1."""
    k = v.grid.k
    return ScalarField(v.grid, 1j * (k[0] * v.coeffs[1] - k[1] * v.coeffs[0]))


def vertical_derivative(v: VectorField) -> np.ndarray:
    """Coefficients of d = d3 v_h, shape (2, n, n, n)."""
    return 1j * v.grid.k[2] * v.coeffs[:2]


def _hgrad_dot(grid: Grid, a_vals: np.ndarray, b_coeffs: np.ndarray) -> np.ndarray:
    """Physical values of (a . grad_h) b for horizontal a (2, ...) and b coeffs (m, ...)."""
    k = grid.k
    out = []
    for bc in b_coeffs:
        d1 = _ifft(1j * k[0] * bc, grid.n)
        d2 = _ifft(1j * k[1] * bc, grid.n)
        out.append(a_vals[0] * d1 + a_vals[1] * d2)
    return np.stack(out)


@dataclass
class LimitResidualFields:
    momentum: np.ndarray
    vorticity: np.ndarray
    d: np.ndarray


def limit_system_residual_fields(states: Sequence[LimitState], times,
                                 forcing: Sequence[VectorField] | None = None
                                 ) -> LimitResidualFields:
    """Pointwise residuals of the limit momentum, vorticity and d equations.

    Time derivatives are fourth-order finite differences over the series.
    With ``forcing`` the residuals of the forced system (right-hand side F_h,
    curl_h F_h and d3 F_h) are returned instead.
    """
    times = np.asarray(times, dtype=float)
    if len(times) != len(states):
        raise ValueError("one time per state required")
    d = np.diff(times)
    if np.max(np.abs(d - d.mean())) > 1e-12 * max(abs(d.mean()), np.abs(times).max()):
        raise ValueError("limit-system residuals need uniformly spaced times")
    grid = states[0].velocity.grid
    n = grid.n
    k = grid.k
    vh_c = np.stack([s.velocity.coeffs[:2] for s in states])
    w_c = np.stack([horizontal_vorticity(s.velocity).coeffs for s in states])
    d_c = np.stack([vertical_derivative(s.velocity) for s in states])
    dvh = _time_derivative(_ifft(vh_c, n), times)
    dw = _time_derivative(_ifft(w_c, n), times)
    dd = _time_derivative(_ifft(d_c, n), times)
    mom, vor, dres = [], [], []
    for j, s in enumerate(states):
        vh_vals = _ifft(vh_c[j], n)
        p = s.pressure.coeffs
        lap = lambda c: _ifft(-grid.k2 * c, n)
        gp = _ifft(np.stack([1j * k[0] * p, 1j * k[1] * p]), n)
        m = dvh[j] - lap(vh_c[j]) + _hgrad_dot(grid, vh_vals, vh_c[j]) + gp
        v = dw[j] - lap(w_c[j]) + _hgrad_dot(grid, vh_vals, w_c[j][None])[0]
        d_vals = _ifft(d_c[j], n)
        r = dd[j] - lap(d_c[j]) + _hgrad_dot(grid, vh_vals, d_c[j]) + _hgrad_dot(grid, d_vals, vh_c[j])
        if forcing is not None:
            fc = forcing[j].coeffs[:2]
            m = m - _ifft(fc, n)
            v = v - _ifft(1j * (k[0] * fc[1] - k[1] * fc[0]), n)
            r = r - _ifft(1j * k[2] * fc, n)
        mom.append(m)
        vor.append(v)
        dres.append(r)
    return LimitResidualFields(np.stack(mom), np.stack(vor), np.stack(dres))


@dataclass
class LimitResiduals:
    r_momentum: float
    r_vorticity: float
    r_d: float


def limit_system_residuals(states, times, forcing=None) -> LimitResiduals:
    f = limit_system_residual_fields(states, times, forcing)
    return LimitResiduals(float(np.abs(f.momentum).max()), float(np.abs(f.vorticity).max()),
                          float(np.abs(f.d).max()))


def limit_states_from_trajectory(traj: Trajectory) -> list[LimitState]:
    return [LimitState.from_velocity(u, p) for u, p in zip(traj.velocity, traj.pressure)]


# ---------------------------------------------------------------- cutoff energy estimates

def _ramp(s):
    """1 for s <= 0, cos^2 ramp on (0, 1), 0 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    return np.where(s >= 1, 0.0, np.cos(0.5 * np.pi * s) ** 2)


def _ramp_d(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, -0.5 * np.pi * np.sin(np.pi * np.clip(s, 0, 1)), 0.0)


def _ramp_dd(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, -0.5 * np.pi**2 * np.cos(np.pi * np.clip(s, 0, 1)), 0.0)


@dataclass(frozen=True)
class CylinderCutoff:
    """Space-time cutoff equal to 1 on Q_{inner} and vanishing outside Q_{outer}.

    Radii are in units of ``r_unit``; the profile is a tensor product of a
    radial cos^2 ramp and a cos^2 ramp in the parabolic time variable.
    """

    center: tuple[float, float, float]
    t0: float
    outer: float
    inner: float
    r_unit: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.inner < self.outer:
            raise ValueError(f"cutoff needs 0 < inner < outer, got {self.inner}, {self.outer}")

    def _space(self, grid: Grid):
        x = grid.mesh()
        L = grid.length
        disp = [((xi - ci + L / 2) % L) - L / 2 for xi, ci in zip(x, self.center)]
        rho = np.sqrt(sum(d**2 for d in disp))
        a, b = self.inner * self.r_unit, self.outer * self.r_unit
        s = (rho - a) / (b - a)
        val = _ramp(s)
        dval = _ramp_d(s) / (b - a)
        ddval = _ramp_dd(s) / (b - a) ** 2
        safe = np.where(rho > 0, rho, 1.0)
        grad = np.stack([dval * d / safe for d in disp])
        lap = ddval + 2 * dval / safe
        return val, grad, lap

    def _time(self, t):
        a, b = (self.inner * self.r_unit) ** 2, (self.outer * self.r_unit) ** 2
        s = ((self.t0 - t) - a) / (b - a)
        return _ramp(s), -_ramp_d(s) / (b - a)

    def validate(self, grid: Grid, times) -> None:
        if self.outer * self.r_unit > grid.length / 2:
            raise ValueError("cutoff support exceeds the periodic box (outer radius > L/2)")
        if self.t0 - (self.outer * self.r_unit) ** 2 < times[0] - 1e-12:
            raise ValueError("cutoff support starts before the series: it must vanish "
                             "at the first time")
        if self.t0 > times[-1] + 1e-12:
            raise ValueError("cutoff center time lies after the series")

    def fields(self, grid: Grid, t: float):
        """zeta, grad zeta, Lap zeta and d_t zeta on the grid at time ``t``."""
        sv, sg, sl = self._space(grid)
        tv, td = self._time(t)
        if t > self.t0:
            tv, td = 0.0, 0.0
        return sv * tv, sg * tv, sl * tv, sv * td

    def derivative_bounds(self, grid: Grid, times) -> dict:
        sv, sg, sl = self._space(grid)
        td = np.abs([self._time(t)[1] for t in times]).max()
        return {"grad": float(np.sqrt(np.sum(sg**2, axis=0)).max()),
                "dt": float(np.abs(sv).max() * td),
                "lap": float(np.abs(sl).max())}


@dataclass
class AppendixEnergies:
    I: float
    I1: float
    I2: float
    II: float
    II1: float
    II2: float
    II3: float
    w_h_LinfL2: float
    grad_h_v_LinfL2: float
    d_LinfL2: float
    zeta_bounds: dict
    eta_bounds: dict

    @property
    def slack_I(self) -> float:
        return self.I1 + self.I2 - self.I

    @property
    def slack_II(self) -> float:
        return self.II1 + self.II2 + self.II3 - self.II


def _weighted_energy(grid, times, f_coeffs, v_vals, cutoff, extra=None):
    """sup_t int |f|^2 c^4 + 2 int int |grad(f c^2)|^2, and the two (or three)
    right-hand terms of the cutoff energy estimate."""
    n = grid.n
    cell = grid.cell_volume
    k = grid.k
    sup_term, grad_term, t1, t2, t3 = [], [], [], [], []
    for j, t in enumerate(times):
        z, gz, lz, dz = cutoff.fields(grid, t)
        fv = _ifft(f_coeffs[j], n)
        gf = np.stack([_ifft(1j * k[i] * f_coeffs[j], n) for i in range(3)], axis=1)
        z2 = z**2
        gz2 = 2 * z * gz
        gz4 = 4 * z**3 * gz
        dz4 = 4 * z**3 * dz
        f2 = np.sum(fv**2, axis=0)
        sup_term.append(cell * np.sum(f2 * z**4))
        grad_fz = gf * z2 + fv[:, None] * gz2[None]
        grad_term.append(cell * np.sum(grad_fz**2))
        t1.append(cell * np.sum((dz4 + 2 * np.sum(gz2**2, axis=0)) * f2))
        t2.append(cell * np.sum(np.sum(v_vals[j][:3] * gz4, axis=0) * f2))
        if extra is not None:
            t3.append(extra(j, fv, z))
    I = max(sup_term) + 2 * np.trapezoid(grad_term, times)
    out = [I, np.trapezoid(t1, times), np.trapezoid(t2, times)]
    if extra is not None:
        out.append(np.trapezoid(t3, times))
    return [float(x) for x in out]


def _ball_linf_l2(grid, times, vals_series, center, t0, radius):
    L = grid.length
    x = grid.mesh()
    disp = [((xi - ci + L / 2) % L) - L / 2 for xi, ci in zip(x, center)]
    inside = sum(d**2 for d in disp) < radius**2
    cell = grid.cell_volume
    best = 0.0
    for t, v in zip(times, vals_series):
        if t0 - radius**2 - 1e-12 <= t <= t0 + 1e-12:
            best = max(best, cell * np.sum(np.sum(v**2, axis=tuple(range(v.ndim - 3))) * inside))
    return float(np.sqrt(best))


def appendix_energy_quantities(states: Sequence[LimitState], times,
                               zeta: CylinderCutoff, eta: CylinderCutoff) -> AppendixEnergies:
    """Energy quantities of the vorticity (I) and vertical-derivative (II) estimates.

    ``zeta`` should equal 1 on Q_{3/4} and vanish outside Q_1; ``eta`` equal 1
    on Q_{1/3} and vanish outside Q_{1/2}.  Integrals run over the torus with
    the grid rule in space and the trapezoid rule over the series in time.
    """
    times = np.asarray(times, dtype=float)
    grid = states[0].velocity.grid
    zeta.validate(grid, times)
    eta.validate(grid, times)
    n = grid.n
    k = grid.k
    v_c = np.stack([s.velocity.coeffs for s in states])
    v_vals = _ifft(v_c, n)
    w_c = np.stack([horizontal_vorticity(s.velocity).coeffs for s in states])[:, None]
    d_c = np.stack([vertical_derivative(s.velocity) for s in states])
    I, I1, I2 = _weighted_energy(grid, times, w_c, v_vals, zeta)
    gh = [np.stack([[_ifft(1j * k[j] * v_c[m][i], n) for j in range(2)] for i in range(2)])
          for m in range(len(states))]
    cell = grid.cell_volume

    def stretch(j, dv, z):
        # -int (d . grad_h) v_h . 2 d eta^4
        dgv = np.stack([dv[0] * gh[j][i][0] + dv[1] * gh[j][i][1] for i in range(2)])
        return -cell * np.sum(np.sum(dgv * 2 * dv, axis=0) * z**4)

    II, II1, II2, II3 = _weighted_energy(grid, times, d_c, v_vals, eta, stretch)
    r = zeta.r_unit
    w_norm = _ball_linf_l2(grid, times, [_ifft(w, n) for w in w_c], zeta.center, zeta.t0, 0.75 * r)
    gh_norm = _ball_linf_l2(grid, times, gh, zeta.center, zeta.t0, 0.5 * r)
    d_norm = _ball_linf_l2(grid, times, [_ifft(d, n) for d in d_c], zeta.center, zeta.t0, 0.5 * r)
    return AppendixEnergies(I, I1, I2, II, II1, II2, II3, w_norm, gh_norm, d_norm,
                            zeta.derivative_bounds(grid, times), eta.derivative_bounds(grid, times))
