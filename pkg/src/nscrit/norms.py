"""Function-space norms on the torus.

Ball integrals here are indicator-restricted Riemann sums on the uniform
grid with ball centers on grid points.  Suprema over (center, radius) are
taken over a discrete sweep, so reported BMO-type values are lower bounds of
the continuous supremum.  Heat-flow norms integrate in time with a
trapezoid rule in log(tau), which is what a geometric tau grid resolves,
plus the closed-form tail below the smallest tau.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.fft
from scipy.optimize import minimize_scalar

from .spectral_core import (
    FrequencyCutoff,
    Grid,
    ScalarField,
    VectorField,
    fft_workers,
    gradient,
    l2_norm,
    lowpass_split,
)

MIN_RADIUS_CELLS = 4
MEAN_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class BallSpec:
    center: tuple[float, float, float]
    radius: float

    def validate(self, grid: Grid) -> None:
        if not 0 < self.radius <= grid.length / 2 * (1 + 1e-12):
            raise ValueError(f"ball radius {self.radius} outside (0, L/2]")


@dataclass(frozen=True)
class BesovParams:
    """Heat-flow Besov parameters; ``q = inf`` selects the supremum norm."""

    s: float
    p: float
    q: float
    n_tau: int = 64
    tau_min: float = 1e-4
    tau_max: float | None = None

    def __post_init__(self) -> None:
        if not self.s < 0:
            raise ValueError(f"heat characterization needs s < 0, got s={self.s}")
        if not 1 < self.p < np.inf:
            raise ValueError(f"p must lie in (1, inf), got {self.p}")
        if not self.q >= 1:
            raise ValueError(f"q must lie in [1, inf], got {self.q}")

    def tau_grid(self, grid: Grid) -> np.ndarray:
        tmax = self.tau_max if self.tau_max is not None else (grid.length / 2) ** 2
        if not tmax > self.tau_min > 0:
            raise ValueError("tau grid needs 0 < tau_min < tau_max")
        return np.geomspace(self.tau_min, tmax, self.n_tau)


@dataclass
class NormReport:
    kind: str
    params: dict
    value: float
    discretization: dict = field(default_factory=dict)


# ---------------------------------------------------------------- helpers

def _physical(f) -> np.ndarray:
    return f.values if f.values.ndim == 3 else np.sqrt(np.sum(f.values**2, axis=0))


def _require_mean_zero(f) -> None:
    c = np.atleast_1d(f.coeffs[..., 0, 0, 0])
    scale = max(float(np.abs(f.coeffs).max()), 1e-300)
    if np.any(np.abs(c) > MEAN_ZERO_TOL * scale):
        raise ValueError(
            f"homogeneous norm needs a mean-zero field; k=0 coefficient is {c}"
        )


def _check_radius(grid: Grid, radius: float) -> None:
    if radius < MIN_RADIUS_CELLS * grid.spacing * (1 - 1e-12):
        raise ValueError(
            f"ball radius {radius:.4g} is below {MIN_RADIUS_CELLS} grid spacings "
            f"({MIN_RADIUS_CELLS * grid.spacing:.4g}); the ball is unresolved"
        )
    if radius > grid.length / 2 * (1 + 1e-12):
        raise ValueError(f"ball radius {radius:.4g} exceeds L/2")


@lru_cache(maxsize=64)
def _stencil(n: int, length: float, radius: float) -> np.ndarray:
    """Integer offsets j with |j h| < radius, shape (m, 3)."""
    h = length / n
    jmax = int(np.floor(radius / h))
    j = np.arange(-jmax, jmax + 1)
    jj = np.stack(np.meshgrid(j, j, j, indexing="ij"), axis=-1).reshape(-1, 3)
    keep = np.sum(jj.astype(float) ** 2, axis=1) < (radius / h) ** 2
    return jj[keep]


@lru_cache(maxsize=64)
def _indicator_hat(n: int, length: float, radius: float) -> np.ndarray:
    ind = np.zeros((n, n, n))
    s = _stencil(n, length, radius) % n
    ind[s[:, 0], s[:, 1], s[:, 2]] = 1.0
    return scipy.fft.rfftn(ind, workers=fft_workers())


def _ball_means(values: np.ndarray, grid: Grid, radius: float) -> np.ndarray:
    """Average of ``values`` over the Riemann ball around every grid point."""
    count = len(_stencil(grid.n, grid.length, radius))
    hat = scipy.fft.rfftn(values, workers=fft_workers())
    conv = scipy.fft.irfftn(hat * _indicator_hat(grid.n, grid.length, radius),
                            s=values.shape, workers=fft_workers())
    return conv / count


def _snap_center(grid: Grid, center) -> np.ndarray:
    return np.rint(np.asarray(center, dtype=float) / grid.spacing).astype(int) % grid.n


def ball_values(values: np.ndarray, grid: Grid, ball: BallSpec) -> np.ndarray:
    """Grid values inside ``ball``; the center is snapped to the nearest grid point."""
    ball.validate(grid)
    _check_radius(grid, ball.radius)
    c = _snap_center(grid, ball.center)
    idx = (_stencil(grid.n, grid.length, ball.radius) + c) % grid.n
    return values[..., idx[:, 0], idx[:, 1], idx[:, 2]]


def default_radii(grid: Grid) -> np.ndarray:
    r = MIN_RADIUS_CELLS * grid.spacing
    out = []
    while r <= grid.length / 2 * (1 + 1e-12):
        out.append(r)
        r *= 2
    return np.array(out)


def center_indices(grid: Grid, stride: int = 4) -> np.ndarray:
    c = np.arange(0, grid.n, stride)
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)


def _oscillations(values: np.ndarray, grid: Grid, radius: float,
                  centers: np.ndarray, q: float) -> np.ndarray:
    n = grid.n
    st = _stencil(n, grid.length, radius)
    flat = values.ravel()
    out = np.empty(len(centers))
    chunk = max(1, int(4e6 // len(st)))
    for a in range(0, len(centers), chunk):
        c = centers[a:a + chunk]
        ijk = (c[:, None, :] + st[None, :, :]) % n
        vals = flat[(ijk[..., 0] * n + ijk[..., 1]) * n + ijk[..., 2]]
        dev = np.abs(vals - vals.mean(axis=1, keepdims=True))
        out[a:a + chunk] = np.mean(dev**q, axis=1) ** (1.0 / q)
    return out


# ---------------------------------------------------------------- Lebesgue

def lebesgue_norm(f, p: float, region: BallSpec | None = None) -> float:
    """L^p norm over the whole torus or over a grid ball; vector fields use |u|."""
    if not p >= 1:
        raise ValueError(f"L^p needs p >= 1, got {p}")
    grid = f.grid
    vals = np.abs(_physical(f))
    if region is not None:
        vals = ball_values(vals, grid, region)
    if np.isinf(p):
        return float(vals.max()) if vals.size else 0.0
    return float((grid.cell_volume * np.sum(vals**p)) ** (1.0 / p))


# ---------------------------------------------------------------- BMO family

def mean_oscillation(f: ScalarField, ball: BallSpec, q: float = 1.0) -> float:
    """(|B|^-1 int_B |f - f_B|^q)^(1/q) on the grid ball."""
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q}")
    vals = ball_values(f.values, f.grid, ball)
    return float(np.mean(np.abs(vals - vals.mean()) ** q) ** (1.0 / q))


def oscillation_table(f: ScalarField, radii=None, center_stride: int = 4,
                      q: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean oscillation for every (radius, center) of the sweep.

    Returns ``(radii, centers, table)`` with ``table[i, j]`` the oscillation
    over the ball of radius ``radii[i]`` at grid point ``centers[j]``.
    """
    grid = f.grid
    radii = default_radii(grid) if radii is None else np.atleast_1d(np.asarray(radii, float))
    for r in radii:
        _check_radius(grid, r)
    centers = center_indices(grid, center_stride)
    table = np.stack([_oscillations(f.values, grid, r, centers, q) for r in radii])
    return radii, centers, table


def bmo_norm_oscillation(f: ScalarField, radii=None, center_stride: int = 4,
                         q: float = 1.0) -> float:
    return float(oscillation_table(f, radii, center_stride, q)[2].max())


def vmo_defect(f: ScalarField, radius: float, center_stride: int = 4, q: float = 1.0) -> float:
    """Largest mean oscillation at the fixed scale ``radius``."""
    return bmo_norm_oscillation(f, [radius], center_stride, q)


class _HeatFlow:
    """Physical values of exp(t Laplacian) f (or of its gradient) on demand."""

    def __init__(self, f, gradient_form: bool = False):
        grid = f.grid
        self.grid = grid
        half = grid.n // 2 + 1
        c = np.atleast_1d(f.coeffs) if f.coeffs.ndim == 4 else f.coeffs[None]
        if gradient_form:
            if c.shape[0] != 1:
                raise ValueError("gradient Carleson form takes a scalar field")
            c = gradient(ScalarField(grid, c[0])).coeffs
        self._half = c[..., :half] * grid.n**3
        self._k2 = grid.k2[..., :half]

    def values(self, t: float) -> np.ndarray:
        spec = self._half if t == 0 else self._half * np.exp(-t * self._k2)
        n = self.grid.n
        return scipy.fft.irfftn(spec, s=(n, n, n), axes=(-3, -2, -1), workers=fft_workers())

    def square(self, t: float) -> np.ndarray:
        return np.sum(self.values(t) ** 2, axis=0)


def carleson_time_weights(taus: np.ndarray, horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for int_0^horizon g(t) dt.

    Linear trapezoid on [0, tau_1], then trapezoid in log t on the grid nodes
    below ``horizon`` with ``horizon`` itself as the last node.
    """
    inner = taus[taus < horizon * (1 - 1e-12)]
    nodes = np.concatenate([[0.0], inner, [horizon]])
    w = np.zeros_like(nodes)
    w[0] += nodes[1] / 2
    w[1] += nodes[1] / 2
    logs = np.log(nodes[1:])
    d = np.diff(logs)
    w[1:-1] += nodes[1:-1] * d / 2
    w[2:] += nodes[2:] * d / 2
    return nodes, w


def carleson_table(f, taus: np.ndarray | None = None, radii=None,
                   center_stride: int = 4, gradient_form: bool = False):
    """Carleson averages |B|^-1 int_B int_0^{R^2} |e^{t Lap} v|^2 dt dx.

    Returns ``(radii, centers, table)``; the norm is ``sqrt(table.max())``.
    """
    _require_mean_zero(f)
    grid = f.grid
    if taus is None:
        taus = BesovParams(-1.0, 2.0, 2.0).tau_grid(grid)
    radii = default_radii(grid) if radii is None else np.atleast_1d(np.asarray(radii, float))
    for r in radii:
        _check_radius(grid, r)
    flow = _HeatFlow(f, gradient_form)
    plans = [carleson_time_weights(taus, r * r) for r in radii]
    nodes = np.unique(np.concatenate([p[0] for p in plans]))
    acc = np.zeros((len(radii),) + (grid.n,) * 3)
    for t in nodes:
        sq = flow.square(t)
        for i, (tn, w) in enumerate(plans):
            hit = np.nonzero(tn == t)[0]
            if hit.size:
                acc[i] += w[hit].sum() * sq
    centers = center_indices(grid, center_stride)
    table = np.stack([
        _ball_means(acc[i], grid, r)[centers[:, 0], centers[:, 1], centers[:, 2]]
        for i, r in enumerate(radii)
    ])
    return radii, centers, np.maximum(table, 0.0)


def bmo_carleson_norm(f: ScalarField, taus=None, radii=None, center_stride: int = 4) -> float:
    """BMO norm through the Carleson integral of the heat-extended gradient."""
    return float(np.sqrt(carleson_table(f, taus, radii, center_stride, True)[2].max()))


def bmo_minus1_norm(f, taus=None, radii=None, center_stride: int = 4) -> float:
    """BMO^-1 norm through the Carleson integral of the heat extension."""
    return float(np.sqrt(carleson_table(f, taus, radii, center_stride, False)[2].max()))


# ---------------------------------------------------------------- Besov

def _lp_whole(vals: np.ndarray, p: float, cell: float) -> float:
    return float((cell * np.sum(np.abs(vals) ** p)) ** (1.0 / p))


def besov_profile(f: ScalarField, params: BesovParams) -> tuple[np.ndarray, np.ndarray]:
    """tau grid and the integrand tau^(-s/2) ||e^{tau Lap} f||_p on it."""
    _require_mean_zero(f)
    taus = params.tau_grid(f.grid)
    flow = _HeatFlow(f)
    g = np.array([
        t ** (-params.s / 2) * _lp_whole(flow.values(t)[0], params.p, f.grid.cell_volume)
        for t in taus
    ])
    return taus, g


def _besov_from_profile(taus, g, q, s) -> float:
    """Trapezoid in log tau plus the tail below the grid.

    For tau < tau_min the heat flow of band-limited data is frozen, so the
    integrand is g(tau_min) (tau / tau_min)^(-s/2) and its tail is closed form.
    """
    if np.isinf(q):
        return float(g.max())
    tail = g[0] ** q / (-s / 2 * q)
    return float((np.trapezoid(g**q, np.log(taus)) + tail) ** (1.0 / q))


def besov_norm(f: ScalarField, params: BesovParams, refine: bool = False) -> float:
    """Heat-flow Besov norm || ||tau^{-s/2} e^{tau Lap} f||_p ||_{L^q(dtau/tau)}.

    With ``q = inf`` and ``refine=True`` the grid maximum is polished by a
    bounded scalar search in log tau between the neighbours of the grid argmax.
    """
    taus, g = besov_profile(f, params)
    value = _besov_from_profile(taus, g, params.q, params.s)
    if not (refine and np.isinf(params.q)) or value == 0:
        return value
    i = int(np.argmax(g))
    lo, hi = np.log(taus[max(i - 1, 0)]), np.log(taus[min(i + 1, len(taus) - 1)])
    flow = _HeatFlow(f)

    def neg(logt):
        t = np.exp(logt)
        return -t ** (-params.s / 2) * _lp_whole(flow.values(t)[0], params.p, f.grid.cell_volume)

    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    return float(max(value, -res.fun))


# ---------------------------------------------------------------- lemmas

def embedding_ratio(f: ScalarField, p: float, q: float, taus=None, radii=None,
                    center_stride: int = 4) -> float:
    """||f||_{BMO^-1} / ||f||_{B^{-1+3/p}_{p,q}}; inf flags a discretization fault."""
    if not 3 < p < np.inf:
        raise ValueError(f"embedding check needs 3 < p < inf, got {p}")
    if not 1 <= q < np.inf:
        raise ValueError(f"embedding check needs 1 <= q < inf, got {q}")
    params = BesovParams(-1 + 3 / p, p, q)
    bmo = bmo_minus1_norm(f, taus, radii, center_stride)
    besov = besov_norm(f, params)
    if besov == 0:
        return 0.0 if bmo == 0 else float("inf")
    return bmo / besov


def embedding_ratios(f: ScalarField, ps: Sequence[float], radii=None,
                     center_stride: int = 4) -> dict[float, float]:
    """``embedding_ratio(f, p, p)`` for several p sharing one BMO^-1 evaluation
    and one pass of the heat flow over the tau grid."""
    for p in ps:
        if not 3 < p < np.inf:
            raise ValueError(f"embedding check needs 3 < p < inf, got {p}")
    bmo = bmo_minus1_norm(f, None, radii, center_stride)
    params = {p: BesovParams(-1 + 3 / p, p, p) for p in ps}
    taus = next(iter(params.values())).tau_grid(f.grid)
    flow = _HeatFlow(f)
    cell = f.grid.cell_volume
    profiles = {p: [] for p in ps}
    for t in taus:
        vals = flow.values(t)[0]
        for p, par in params.items():
            profiles[p].append(t ** (-par.s / 2) * _lp_whole(vals, p, cell))
    out = {}
    for p in ps:
        besov = _besov_from_profile(taus, np.array(profiles[p]), p, params[p].s)
        out[p] = (0.0 if bmo == 0 else float("inf")) if besov == 0 else bmo / besov
    return out


@dataclass
class InterpolationRecord:
    p: float
    theta: float
    lhs: float
    besov_factor: float
    h1_factor: float
    best_constant: float | None
    levels: list[int]
    low_norms: list[float]
    high_norms: list[float]
    low_constants: list[float | None]
    high_constants: list[float | None]


def interpolation_exponent(p: float) -> float:
    return p / (2 * p - 3)


def interp_check(u: ScalarField, p: float, levels: Sequence[int] = (0, 1, 2),
                 center=(0.0, 0.0, 0.0), radius: float = 1.0) -> InterpolationRecord:
    """Empirical constants for ||u||_{L^2(B_1)} <= C ||u||_B^theta ||u||_{H^1}^(1-theta).

    The Besov factor is the q = inf heat-flow norm with s = -1 + 3/p and the
    H^1 factor is ||grad u||_{L^2(T^3)}.  For each cutoff level N the record
    also carries ||u_N||_{L^2(B_1)} / (2^{N(1-3/p)} besov) and
    ||u^N||_{L^2} / (2^{-N} h1), the two bounds the optimization over N uses.
    """
    if not 3 < p < np.inf:
        raise ValueError(f"interpolation needs 3 < p < inf, got {p}")
    theta = interpolation_exponent(p)
    ball = BallSpec(tuple(center), radius)
    lhs = lebesgue_norm(u, 2, ball)
    besov = besov_norm(u, BesovParams(-1 + 3 / p, p, np.inf))
    h1 = l2_norm(gradient(u))
    denom = besov**theta * h1 ** (1 - theta)
    best = lhs / denom if denom > 0 else None
    lows, highs, clow, chigh = [], [], [], []
    for level in levels:
        low, high = lowpass_split(u, FrequencyCutoff(level))
        ln = lebesgue_norm(low, 2, ball)
        hn = l2_norm(high)
        lows.append(ln)
        highs.append(hn)
        clow.append(ln / (2.0 ** (level * (1 - 3 / p)) * besov) if besov > 0 else None)
        chigh.append(hn / (2.0 ** (-level) * h1) if h1 > 0 else None)
    return InterpolationRecord(p, theta, lhs, besov, h1, best, list(levels),
                               lows, highs, clow, chigh)


def evaluate_norm(kind: str, f, **params) -> NormReport:
    """Evaluate a named norm and record the discretization that produced it."""
    grid = f.grid
    disc = {"n": grid.n, "L": grid.length}
    if kind in ("bmo_oscillation", "bmo_carleson", "bmo_minus1"):
        radii = params.get("radii")
        disc["radii"] = list(default_radii(grid) if radii is None else radii)
        disc["center_stride"] = params.get("center_stride", 4)
    if kind == "lebesgue":
        value = lebesgue_norm(f, params["p"], params.get("region"))
    elif kind == "bmo_oscillation":
        value = bmo_norm_oscillation(f, **params)
    elif kind == "bmo_carleson":
        value = bmo_carleson_norm(f, **params)
    elif kind == "bmo_minus1":
        value = bmo_minus1_norm(f, **params)
    elif kind == "besov":
        bp = params["params"]
        disc["tau"] = [float(bp.tau_grid(grid)[0]), float(bp.tau_grid(grid)[-1]), bp.n_tau]
        value = besov_norm(f, bp, params.get("refine", False))
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    return NormReport(kind, {k: v for k, v in params.items() if k != "params"}, value, disc)
