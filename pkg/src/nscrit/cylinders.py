"""Space-time integrals over parabolic cylinders Q_r(z0) = (t0 - r^2, t0) x B_r(x0).

Space integrals use a nested Gauss rule on the ball and evaluate the
band-limited fields off the grid through their Fourier series.  The nodes
scale with the ball, so rescaled trajectories are sampled at exactly the
same physical points as the originals; scaling identities then hold to
roundoff.  Time integrals are trapezoid sums over the exact interval
[t0 - r^2, t0]: interior snapshots are used as they are, and the integrand
is interpolated linearly in time at the two ends when they fall between
snapshots.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from .spectral_core import (
    Grid,
    ScalarField,
    VectorField,
    curl,
    divergence,
    gradient,
    laplacian,
    rescale_field,
)

QUADRATURE_ORDER = 16


class WindowError(ValueError):
    """A cylinder does not fit inside the stored time window."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly spaced velocity/pressure snapshots of one solution."""

    times: np.ndarray
    velocity: tuple
    pressure: tuple
    viscosity: float = 1.0
    history: dict = field(default_factory=dict)
    check: bool = True

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "velocity", tuple(self.velocity))
        object.__setattr__(self, "pressure", tuple(self.pressure))
        if not (len(t) == len(self.velocity) == len(self.pressure)) or len(t) == 0:
            raise ValueError("times, velocity and pressure must have one entry per snapshot")
        if len(t) > 1:
            d = np.diff(t)
            if np.any(d <= 0):
                raise ValueError("snapshot times must be strictly increasing")
            if np.max(np.abs(d - d.mean())) > 1e-12 * max(abs(d.mean()), np.abs(t).max()):
                raise ValueError("snapshot times are not uniformly spaced")
        if self.check:
            for j, (u, p) in enumerate(zip(self.velocity, self.pressure)):
                div = np.abs(divergence(u).values).max()
                if div > 1e-10 * max(np.abs(u.values).max(), 1e-300):
                    raise ValueError(f"snapshot {j}: velocity is not divergence-free ({div:.2e})")
                if abs(p.coeffs[0, 0, 0]) > 1e-12 * max(np.abs(p.coeffs).max(), 1e-300):
                    raise ValueError(f"snapshot {j}: pressure is not mean-zero")

    @property
    def grid(self) -> Grid:
        return self.velocity[0].grid

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self) -> int:
        return len(self.times)


def rescale_trajectory(traj: Trajectory, lam: int, window=None) -> Trajectory:
    """u_lam(x, s) = lam u(lam x, lam^2 s), pi_lam = lam^2 pi(lam x, lam^2 s).

    Snapshot j of the result sits at time ``times[j] / lam**2``.  With
    ``window=(a, b)`` only the snapshots covering [a, b] are kept (including
    the neighbours that bracket the ends), and the window must map inside the
    stored one.
    """
    times = traj.times / lam**2
    keep = np.ones(len(times), dtype=bool)
    if window is not None:
        a, b = window
        tol = 1e-9 * max(traj.dt, 1e-300)
        if lam**2 * a < traj.times[0] - tol or lam**2 * b > traj.times[-1] + tol:
            raise WindowError(
                f"rescaled window [{a}, {b}] needs original times "
                f"[{lam**2 * a}, {lam**2 * b}] outside stored [{traj.times[0]}, {traj.times[-1]}]"
            )
        t_tol = tol / lam**2
        i_lo = int(np.nonzero(times <= a + t_tol)[0].max())
        i_hi = int(np.nonzero(times >= b - t_tol)[0].min())
        keep[:] = False
        keep[i_lo:i_hi + 1] = True
    vel = [rescale_field(u, lam, 1) for u, k in zip(traj.velocity, keep) if k]
    pre = [rescale_field(p, lam, 2) for p, k in zip(traj.pressure, keep) if k]
    return Trajectory(times[keep], vel, pre, traj.viscosity, check=False)


@dataclass(frozen=True)
class ParabolicCylinder:
    center: tuple[float, float, float]
    t0: float
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"cylinder radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass
class CylinderQuantities:
    A: float
    C: float
    E: float
    D: float
    D_osc: float
    r: float
    center: tuple
    t0: float


# ---------------------------------------------------------------- quadrature

@lru_cache(maxsize=8)
def _gauss(m: int):
    return np.polynomial.legendre.leggauss(m)


def ball_rule(center, radius: float, m: int = QUADRATURE_ORDER):
    """Nested Gauss rule on B_radius(center).

    x1 = r y1, x2 = s1 sin(b), x3 = s2 y3 with s1 = sqrt(r^2 - x1^2) and
    s2 = s1 cos(b); every inner integrand is smooth in its variable for
    smooth f.  Returns the node coordinates per nesting level and the
    weights of shape (m, m, m).
    """
    y, w = _gauss(m)
    beta, wb = 0.5 * np.pi * y, 0.5 * np.pi * w
    x1 = radius * y
    s1 = radius * np.sqrt(1 - y**2)
    x2 = s1[:, None] * np.sin(beta)[None, :]
    s2 = s1[:, None] * np.cos(beta)[None, :]
    x3 = s2[:, :, None] * y[None, None, :]
    weights = ((radius * w)[:, None, None]
               * (s1[:, None] * np.cos(beta)[None, :] * wb[None, :])[:, :, None]
               * (s2[:, :, None] * w[None, None, :]))
    c = np.asarray(center, dtype=float)
    return x1 + c[0], x2 + c[1], x3 + c[2], weights


def evaluate_on_ball(coeffs: np.ndarray, grid: Grid, nodes) -> np.ndarray:
    """Evaluate Fourier series ``coeffs`` (..., n, n, n) at the nested ball nodes."""
    x1, x2, x3, _ = nodes
    k = grid.k1d
    lead = coeffs.shape[:-3]
    c = coeffs.reshape((-1,) + coeffs.shape[-3:])
    e1 = np.exp(1j * x1[:, None] * k[None, :])
    t1 = np.einsum("bijk,ai->bajk", c, e1)
    e2 = np.exp(1j * x2[:, :, None] * k)
    t2 = np.einsum("bajk,acj->back", t1, e2)
    e3 = np.exp(1j * x3[..., None] * k)
    out = np.einsum("back,acdk->bacd", t2, e3).real
    return out.reshape(lead + out.shape[1:])


def _window(times: np.ndarray, t0: float, r: float) -> slice:
    lo = t0 - r * r
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    tol = 1e-9 * abs(dt)
    if lo < times[0] - tol or t0 > times[-1] + tol:
        raise WindowError(
            f"cylinder time interval [{lo:.6g}, {t0:.6g}] is outside the stored "
            f"window [{times[0]:.6g}, {times[-1]:.6g}]"
        )
    i_lo = int(np.nonzero(times <= lo + tol)[0].max())
    i_hi = int(np.nonzero(times >= t0 - tol)[0].min())
    if i_hi - i_lo < 1:
        raise WindowError(
            f"fewer than 2 snapshots in [{lo:.6g}, {t0:.6g}] (snapshot step {dt:.3g})"
        )
    return slice(i_lo, i_hi + 1)


def _clip(values, times: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-snapshot ``values`` restricted to [lo, hi], ends linearly interpolated."""
    values = np.asarray(values, dtype=float)
    tol = 1e-9 * abs(times[1] - times[0]) if len(times) > 1 else 0.0
    inner = (times > lo + tol) & (times < hi - tol)
    tt = np.concatenate([[lo], times[inner], [hi]])
    return tt, np.interp(tt, times, values)


def _check_radius(grid: Grid, r: float) -> None:
    if r > grid.length / 2 * (1 + 1e-12):
        raise ValueError(f"cylinder radius {r} exceeds L/2 = {grid.length / 2}")


def _coeff_stack(f) -> np.ndarray:
    return f.coeffs if f.coeffs.ndim == 4 else f.coeffs[None]


def space_time_norm(times, fields: Sequence, p: float, q: float,
                    cyl: ParabolicCylinder, order: int = QUADRATURE_ORDER) -> float:
    """||f||_{L^q_t L^p_x(Q_r(z0))}; vector fields use the Euclidean length."""
    if not (p >= 1 and q >= 1):
        raise ValueError(f"need p, q >= 1, got p={p}, q={q}")
    times = np.asarray(times, dtype=float)
    grid = fields[0].grid
    _check_radius(grid, cyl.radius)
    sl = _window(times, cyl.t0, cyl.radius)
    nodes = ball_rule(cyl.center, cyl.radius, order)
    w = nodes[3]
    per_t = []
    for f in fields[sl]:
        vals = evaluate_on_ball(_coeff_stack(f), grid, nodes)
        mag = np.sqrt(np.sum(vals**2, axis=0))
        if np.isinf(p):
            per_t.append(mag.max())
        else:
            per_t.append(np.sum(w * mag**p) ** (1.0 / p))
    per_t = np.array(per_t)
    lo = cyl.t0 - cyl.radius**2
    if np.isinf(q):
        return float(_clip(per_t, times[sl], lo, cyl.t0)[1].max())
    tt, integrand = _clip(per_t**q, times[sl], lo, cyl.t0)
    return float(np.trapezoid(integrand, tt) ** (1.0 / q))


def scaled_quantity(times, fields, kind: str, p: float, q: float,
                    cyl: ParabolicCylinder, order: int = QUADRATURE_ORDER) -> float:
    """G (kind='G') or H (kind='H'): r^{1 or 2 - 3/p - 2/q} ||f||_{L^q L^p(Q_r)}."""
    base = {"G": 1.0, "H": 2.0}.get(kind)
    if base is None:
        raise ValueError(f"kind must be 'G' or 'H', got {kind!r}")
    expo = base - (0.0 if np.isinf(p) else 3.0 / p) - (0.0 if np.isinf(q) else 2.0 / q)
    return cyl.radius**expo * space_time_norm(times, fields, p, q, cyl, order)


def field_series(traj: Trajectory, name: str) -> list:
    """Named per-snapshot fields: u, u1, u2, u3, uh, pressure, vorticity."""
    if name == "u":
        return list(traj.velocity)
    if name in ("u1", "u2", "u3"):
        i = int(name[1]) - 1
        return [ScalarField(u.grid, u.coeffs[i]) for u in traj.velocity]
    if name == "uh":
        out = []
        for u in traj.velocity:
            c = u.coeffs.copy()
            c[2] = 0
            out.append(VectorField(u.grid, c))
        return out
    if name == "pressure":
        return list(traj.pressure)
    if name == "vorticity":
        return [curl(u) for u in traj.velocity]
    raise ValueError(f"unknown field name {name!r}")


def G(traj: Trajectory, name: str, p: float, q: float, cyl: ParabolicCylinder) -> float:
    return scaled_quantity(traj.times, field_series(traj, name), "G", p, q, cyl)


def H(traj: Trajectory, name: str, p: float, q: float, cyl: ParabolicCylinder) -> float:
    return scaled_quantity(traj.times, field_series(traj, name), "H", p, q, cyl)


def cylinder_quantities(traj: Trajectory, cyl: ParabolicCylinder,
                        order: int = QUADRATURE_ORDER) -> CylinderQuantities:
    """A, C, E, D over Q_r(z0); also D with pressure minus its ball mean."""
    grid = traj.grid
    r = cyl.radius
    _check_radius(grid, r)
    sl = _window(traj.times, cyl.t0, r)
    nodes = ball_rule(cyl.center, r, order)
    w = nodes[3]
    k = grid.k
    a_t, c_t, e_t, d_t, dosc_t = [], [], [], [], []
    for u, pr in zip(traj.velocity[sl], traj.pressure[sl]):
        grad = np.stack([1j * k[j] * u.coeffs[i] for i in range(3) for j in range(3)])
        stack = np.concatenate([u.coeffs, grad, pr.coeffs[None]])
        vals = evaluate_on_ball(stack, grid, nodes)
        speed2 = np.sum(vals[:3] ** 2, axis=0)
        a_t.append(np.sum(w * speed2))
        c_t.append(np.sum(w * speed2**1.5))
        e_t.append(np.sum(w * np.sum(vals[3:12] ** 2, axis=0)))
        pv = vals[12]
        d_t.append(np.sum(w * np.abs(pv) ** 1.5))
        pbar = np.sum(w * pv) / np.sum(w)
        dosc_t.append(np.sum(w * np.abs(pv - pbar) ** 1.5))
    t = traj.times[sl]
    lo = cyl.t0 - r * r

    def integral(series):
        return np.trapezoid(*_clip(series, t, lo, cyl.t0)[::-1])

    return CylinderQuantities(
        A=float(_clip(a_t, t, lo, cyl.t0)[1].max() / r),
        C=float(integral(c_t) / r**2),
        E=float(integral(e_t) / r),
        D=float(integral(d_t) / r**2),
        D_osc=float(integral(dosc_t) / r**2),
        r=r, center=cyl.center, t0=cyl.t0,
    )


def default_center(traj: Trajectory, center=None, t0=None) -> tuple[tuple, float]:
    c = (0.0, 0.0, 0.0) if center is None else tuple(center)
    return c, float(traj.times[-1] if t0 is None else t0)


# ---------------------------------------------------------------- local energy

def _time_derivative(series: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Fourth-order finite differences along axis 0 on a uniform grid."""
    if len(times) < 5:
        raise ValueError("fourth-order time derivative needs at least 5 snapshots")
    h = times[1] - times[0]
    f = series
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return d


def _cumulative(y: np.ndarray, x: np.ndarray) -> float:
    if len(x) < 3:
        return float(np.trapezoid(y, x))
    return float(simpson(y, x=x))


@dataclass
class LocalEnergyTerms:
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs

    @property
    def scale(self) -> float:
        return max(abs(self.lhs), abs(self.rhs))


def local_energy_terms(traj: Trajectory, phi: Sequence[ScalarField], t: float,
                       dphi: Sequence[ScalarField] | None = None) -> LocalEnergyTerms:
    """Both sides of the local energy inequality at time ``t``.

    ``phi`` (and optionally its time derivative ``dphi``) is given on the
    snapshot times; without ``dphi`` the derivative is taken by fourth-order
    finite differences.  Time integrals start at the first snapshot and use
    Simpson's rule.
    """
    if len(phi) != len(traj):
        raise ValueError("test function must be sampled on every snapshot")
    pv = np.stack([f.values for f in phi])
    peak = np.abs(pv).max()
    if pv.min() < -1e-12 * max(peak, 1e-300):
        raise ValueError(f"test function is negative somewhere (min {pv.min():.3e})")
    if np.abs(pv[0]).max() > 1e-10 * max(peak, 1e-300):
        raise ValueError("test function does not vanish at the initial time of the window")
    hits = np.nonzero(np.abs(traj.times - t) <= 1e-9 * max(traj.dt, 1e-300))[0]
    if hits.size == 0:
        raise ValueError(f"t={t} is not a snapshot time")
    j = int(hits[0])
    if dphi is None:
        dpv = _time_derivative(pv, traj.times)
    else:
        dpv = np.stack([f.values for f in dphi])
    cell = traj.grid.cell_volume
    dissip, rhs_t = [], []
    for i in range(j + 1):
        u = traj.velocity[i]
        uv = u.values
        speed2 = np.sum(uv**2, axis=0)
        grad_u = np.stack([gradient(c).values for c in u.components])
        gphi = gradient(phi[i]).values
        lap_phi = laplacian(phi[i]).values
        dissip.append(cell * np.sum(np.sum(grad_u**2, axis=(0, 1)) * pv[i]))
        flux = np.sum(uv * gphi, axis=0) * (speed2 + 2 * traj.pressure[i].values)
        rhs_t.append(cell * np.sum(speed2 * (dpv[i] + lap_phi) + flux))
    tt = traj.times[: j + 1]
    u_j = traj.velocity[j].values
    lhs = cell * np.sum(np.sum(u_j**2, axis=0) * pv[j]) + 2 * _cumulative(np.array(dissip), tt)
    return LocalEnergyTerms(float(lhs), _cumulative(np.array(rhs_t), tt))


def local_energy_residual(traj: Trajectory, phi, t: float, dphi=None) -> float:
    """LHS - RHS of the local energy inequality (zero for smooth solutions)."""
    return local_energy_terms(traj, phi, t, dphi).residual


def _smooth_step(s):
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1 - s, 1.0)), 0.0)
    return a / (a + b)


def _smooth_step_dt(s):
    inside = (s > 0) & (s < 1)
    sc = np.where(inside, s, 0.5)
    a = np.exp(-1.0 / sc)
    b = np.exp(-1.0 / (1 - sc))
    da = a / sc**2
    db = -b / (1 - sc) ** 2
    return np.where(inside, (da * (a + b) - a * (da + db)) / (a + b) ** 2, 0.0)


def bump_test_function(grid: Grid, times: np.ndarray, center=(np.pi, np.pi, np.pi),
                       ramp: tuple[float, float] | None = None):
    """phi(x, t) = psi(x) theta(t): a band-limited spatial bump times a smooth
    time ramp that is 0 before ``ramp[0]`` and 1 after ``ramp[1]``.

    psi = prod_i ((1 + cos(k (x_i - c_i))) / 2)^2 with k = 2 pi / L.
    Returns the sampled ``phi`` and its exact time derivative.
    """
    times = np.asarray(times, dtype=float)
    if ramp is None:
        span = times[-1] - times[0]
        ramp = (times[0] + 0.05 * span, times[0] + 0.5 * span)
    x = grid.mesh()
    kk = grid.k_unit
    psi = np.ones_like(x[0])
    for xi, ci in zip(x, center):
        psi = psi * ((1 + np.cos(kk * (xi - ci))) / 2) ** 2
    psi_f = ScalarField.from_values(grid, psi)
    s = (times - ramp[0]) / (ramp[1] - ramp[0])
    theta = _smooth_step(s)
    dtheta = _smooth_step_dt(s) / (ramp[1] - ramp[0])
    phi = [psi_f * float(a) for a in theta]
    dphi = [psi_f * float(b) for b in dtheta]
    return phi, dphi


# ---------------------------------------------------------------- lemma checks

@dataclass
class PressureLemmaRecord:
    lhs: float
    rhs: float
    ratio: float | None
    G_rho: float
    H_pressure_rho: float
    r: float
    rho: float


def pressure_lemma_check(traj: Trajectory, p: float, q: float, r: float, rho: float,
                         center=None, t0=None) -> PressureLemmaRecord:
    """Measured sides of the local pressure bound with unit constants.

    lhs = H(pi, p/2, q/2; r);
    rhs = (rho/r)^{4/q + 6/p - 2} G(u, p, q; rho)^2 + (r/rho)^{2 - 4/q} H(pi, 1, q/2; rho).
    """
    if not p > 2:
        raise ValueError(f"need p > 2, got {p}")
    if not q >= 2:
        raise ValueError(f"need q >= 2, got {q}")
    half_l = traj.grid.length / 2
    if not (0 < 4 * r < rho <= half_l):
        raise ValueError(f"need 0 < 4r < rho <= L/2, got r={r}, rho={rho}")
    c, t0 = default_center(traj, center, t0)
    inv_q = 0.0 if np.isinf(q) else 1.0 / q
    inv_p = 0.0 if np.isinf(p) else 1.0 / p
    small = ParabolicCylinder(c, t0, r)
    big = ParabolicCylinder(c, t0, rho)
    lhs = H(traj, "pressure", p / 2, q / 2, small)
    g = G(traj, "u", p, q, big)
    hp = H(traj, "pressure", 1.0, q / 2, big)
    rhs = (rho / r) ** (4 * inv_q + 6 * inv_p - 2) * g**2 + (r / rho) ** (2 - 4 * inv_q) * hp
    return PressureLemmaRecord(lhs, rhs, lhs / rhs if rhs > 0 else None, g, hp, r, rho)


def radius_sweep(r_max: float, count: int = 8, r_min_frac: float = 1 / 16) -> np.ndarray:
    """Geometric radii in [r_min_frac * r_max, r_max)."""
    return np.geomspace(r_min_frac * r_max, r_max, count + 1)[:-1]


@dataclass
class InvariantLemmaRecord:
    lhs: float
    rhs: float
    ratio: float
    sup_G: float
    hypothesis_ok: bool
    exponents_ok: bool
    quantities: CylinderQuantities
    unit: CylinderQuantities


def invariant_lemma_check(traj: Trajectory, p: float, q: float, M: float, r: float,
                          center=None, t0=None, r_unit: float | None = None,
                          sweep: Sequence[float] | None = None) -> InvariantLemmaRecord:
    """A + E + D at r against (r / r_unit)^{1/2} (C + D at r_unit) + 1, unit constant.

    The hypothesis sup_r G(u, p, q; r) <= M is measured on ``sweep`` (default:
    geometric radii below r_unit) and flagged rather than enforced.
    """
    c, t0 = default_center(traj, center, t0)
    r_unit = traj.grid.length / 4 if r_unit is None else r_unit
    index = (0.0 if np.isinf(p) else 3 / p) + (0.0 if np.isinf(q) else 2 / q)
    exponents_ok = 1 <= index < 2 and q > 1
    radii = radius_sweep(r_unit) if sweep is None else sweep
    sup_g = max(G(traj, "u", p, q, ParabolicCylinder(c, t0, s)) for s in radii)
    here = cylinder_quantities(traj, ParabolicCylinder(c, t0, r))
    unit = cylinder_quantities(traj, ParabolicCylinder(c, t0, r_unit))
    lhs = here.A + here.E + here.D
    rhs = (r / r_unit) ** 0.5 * (unit.C + unit.D) + 1.0
    return InvariantLemmaRecord(lhs, rhs, lhs / rhs, sup_g, sup_g <= M, exponents_ok, here, unit)


@dataclass
class EnergyBoundTable:
    radii: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    AED: np.ndarray

    @property
    def max_F(self) -> float:
        return float(self.F.max())

    @property
    def max_AED(self) -> float:
        return float(self.AED.max())


def energy_bound_check(traj: Trajectory, radii: Sequence[float], center=None,
                       t0=None) -> EnergyBoundTable:
    """F(r) = C(u, r) + D(pi, r) and A + E + D along a radius sweep."""
    c, t0 = default_center(traj, center, t0)
    qs = [cylinder_quantities(traj, ParabolicCylinder(c, t0, r)) for r in radii]
    C = np.array([x.C for x in qs])
    D = np.array([x.D for x in qs])
    return EnergyBoundTable(np.asarray(radii, float), C, D, C + D,
                            np.array([x.A + x.E + x.D for x in qs]))
