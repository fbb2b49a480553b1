"""Periodic field arithmetic on the torus [0, L)^3.

Fields are band-limited trigonometric polynomials.  The canonical storage
is the array of Fourier-series coefficients ``c_k`` with

    f(x) = sum_k c_k exp(i k.x),   k in (2 pi / L) Z^3,  |k_i| < n/2,

laid out in numpy FFT order (``c = fftn(values) / n**3``).  The Nyquist
plane is kept at zero so every field has a unique real-valued trigonometric
interpolant, which is what lets cylinder integrals evaluate the field off
the grid.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
import scipy.fft

THREADS_ENV = "NSCN_THREADS"

# coefficients below this fraction of the peak are treated as roundoff
# when checking whether a rescaled field still fits in the band
RESCALE_SIGNIFICANCE = 1e-12


def fft_workers() -> int:
    """Thread count for transforms, capped by ``NSCN_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _fftn(a: np.ndarray) -> np.ndarray:
    return scipy.fft.fftn(a, axes=(-3, -2, -1), workers=fft_workers())


def _ifftn(a: np.ndarray) -> np.ndarray:
    return scipy.fft.ifftn(a, axes=(-3, -2, -1), workers=fft_workers())


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` points per axis on a box of side ``length``."""

    n: int = 32
    length: float = 2 * np.pi

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"n_per_axis must be an even integer >= 8, got {self.n}")
        if not self.length > 0:
            raise ValueError(f"box_length must be positive, got {self.length}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def volume(self) -> float:
        return self.length**3

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def k_unit(self) -> float:
        return 2 * np.pi / self.length

    @cached_property
    def mode_index(self) -> np.ndarray:
        """Integer mode numbers in FFT order (the Nyquist entry reads -n/2)."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).astype(int)

    @cached_property
    def k1d(self) -> np.ndarray:
        return self.k_unit * self.mode_index

    @cached_property
    def k(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable wavevector components of shapes (n,1,1), (1,n,1), (1,1,n)."""
        k = self.k1d
        return k[:, None, None], k[None, :, None], k[None, None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        k1, k2, k3 = self.k
        return k1**2 + k2**2 + k3**2

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def k2_safe(self) -> np.ndarray:
        out = self.k2.copy()
        out[0, 0, 0] = 1.0
        return out

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on every mode that is kept (i.e. off the Nyquist planes)."""
        keep = self.mode_index != -self.n // 2
        return keep[:, None, None] & keep[None, :, None] & keep[None, None, :]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep = np.abs(self.mode_index) < self.n / 3
        return keep[:, None, None] & keep[None, :, None] & keep[None, None, :]

    @cached_property
    def x1d(self) -> np.ndarray:
        return self.spacing * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.x1d, self.x1d, self.x1d, indexing="ij"))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real scalar field stored by its Fourier coefficients.

    ``space`` records which representation the producer last worked in; both
    ``coeffs`` and ``values`` are always available.
    """

    grid: Grid
    coeffs: np.ndarray
    space: str = "spectral"

    def __post_init__(self) -> None:
        n = self.grid.n
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (n, n, n):
            raise ValueError(f"expected coefficient shape {(n, n, n)}, got {c.shape}")
        if self.space not in ("spectral", "physical"):
            raise ValueError(f"unknown representation {self.space!r}")
        c *= self.grid.nyquist_mask
        object.__setattr__(self, "coeffs", _frozen(c))

    @classmethod
    def from_values(cls, grid: Grid, values) -> "ScalarField":
        values = np.asarray(values, dtype=float)
        return cls(grid, _fftn(values) / grid.n**3, space="physical")

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros((grid.n,) * 3, dtype=complex))

    @cached_property
    def values(self) -> np.ndarray:
        return _frozen(np.ascontiguousarray(_ifftn(self.coeffs).real * self.grid.n**3))

    @property
    def mean(self) -> float:
        return float(self.coeffs[0, 0, 0].real)

    def with_coeffs(self, coeffs) -> "ScalarField":
        return ScalarField(self.grid, coeffs)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.coeffs + other.coeffs)
        out = self.coeffs.copy()
        out[0, 0, 0] += other
        return ScalarField(self.grid, out)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return ScalarField(self.grid, -self.coeffs)

    def __mul__(self, alpha: float):
        return ScalarField(self.grid, alpha * self.coeffs)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField:
    """Three-component real field; ``coeffs`` has shape (3, n, n, n)."""

    grid: Grid
    coeffs: np.ndarray
    divergence_free: bool = False
    space: str = "spectral"

    def __post_init__(self) -> None:
        n = self.grid.n
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (3, n, n, n):
            raise ValueError(f"expected coefficient shape {(3, n, n, n)}, got {c.shape}")
        c *= self.grid.nyquist_mask
        object.__setattr__(self, "coeffs", _frozen(c))
        if self.divergence_free:
            div = np.abs(divergence(self).values).max()
            scale = np.abs(self.values).max()
            if div > 1e-10 * max(scale, 1e-300):
                raise ValueError(
                    f"field flagged divergence-free has max|div u| = {div:.3e} "
                    f"(max|u| = {scale:.3e})"
                )

    @classmethod
    def from_values(cls, grid: Grid, values, divergence_free: bool = False) -> "VectorField":
        values = np.asarray(values, dtype=float)
        return cls(grid, _fftn(values) / grid.n**3, divergence_free, space="physical")

    @classmethod
    def from_components(cls, components, divergence_free: bool = False) -> "VectorField":
        grid = components[0].grid
        return cls(grid, np.stack([c.coeffs for c in components]), divergence_free)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((3,) + (grid.n,) * 3, dtype=complex), divergence_free=True)

    @cached_property
    def values(self) -> np.ndarray:
        return _frozen(np.ascontiguousarray(_ifftn(self.coeffs).real * self.grid.n**3))

    @property
    def components(self) -> tuple[ScalarField, ScalarField, ScalarField]:
        return tuple(ScalarField(self.grid, c) for c in self.coeffs)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=0))

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, -self.coeffs, self.divergence_free)

    def __mul__(self, alpha: float) -> "VectorField":
        return VectorField(self.grid, alpha * self.coeffs)

    __rmul__ = __mul__


Field = Union[ScalarField, VectorField]


def _like(f: Field, coeffs: np.ndarray, **kw) -> Field:
    if isinstance(f, VectorField):
        return VectorField(f.grid, coeffs, **kw)
    return ScalarField(f.grid, coeffs)


def transform(f: Field, target: str) -> Field:
    """Return ``f`` materialized in ``target`` ('spectral' or 'physical')."""
    if target not in ("spectral", "physical"):
        raise ValueError(f"unknown representation {target!r}")
    if isinstance(f, VectorField):
        out = VectorField(f.grid, f.coeffs, space=target)
    else:
        out = ScalarField(f.grid, f.coeffs, space=target)
    if target == "physical":
        out.values
    return out


def l2_inner(f: Field, g: Field) -> float:
    """L^2(T^3) inner product, evaluated by Parseval."""
    return float(f.grid.volume * np.sum((f.coeffs * np.conj(g.coeffs)).real))


def l2_norm(f: Field) -> float:
    return float(np.sqrt(max(l2_inner(f, f), 0.0)))


def heat_semigroup(f: Field, tau: float) -> Field:
    """Apply exp(tau * Laplacian), i.e. multiply mode k by exp(-tau |k|^2)."""
    if tau < 0:
        raise ValueError(f"heat semigroup time must be nonnegative, got {tau}")
    mult = np.exp(-tau * f.grid.k2)
    if isinstance(f, VectorField):
        return VectorField(f.grid, f.coeffs * mult, f.divergence_free)
    return ScalarField(f.grid, f.coeffs * mult)


def derivative(f: ScalarField, axis: int) -> ScalarField:
    return ScalarField(f.grid, 1j * f.grid.k[axis] * f.coeffs)


def gradient(f: ScalarField) -> VectorField:
    k = f.grid.k
    return VectorField(f.grid, np.stack([1j * k[i] * f.coeffs for i in range(3)]))


def divergence(u: VectorField) -> ScalarField:
    k = u.grid.k
    return ScalarField(u.grid, sum(1j * k[i] * u.coeffs[i] for i in range(3)))


def curl(u: VectorField) -> VectorField:
    k1, k2, k3 = u.grid.k
    c = u.coeffs
    w = np.stack([
        1j * (k2 * c[2] - k3 * c[1]),
        1j * (k3 * c[0] - k1 * c[2]),
        1j * (k1 * c[1] - k2 * c[0]),
    ])
    return VectorField(u.grid, w)


def laplacian(f: Field) -> Field:
    return _like(f, -f.grid.k2 * f.coeffs)


def velocity_gradient(u: VectorField) -> np.ndarray:
    """Physical values of d_j u_i, shape (3, 3, n, n, n) indexed [i, j]."""
    k = u.grid.k
    spec = np.stack([np.stack([1j * k[j] * u.coeffs[i] for j in range(3)]) for i in range(3)])
    return _ifftn(spec).real * u.grid.n**3


def leray_project(u: VectorField) -> VectorField:
    """Orthogonal projection onto divergence-free fields."""
    k = u.grid.k
    c = u.coeffs
    kdotc = sum(k[i] * c[i] for i in range(3)) / u.grid.k2_safe
    out = VectorField(u.grid, np.stack([c[i] - k[i] * kdotc for i in range(3)]))
    # roundoff is judged against the input: projecting a pure gradient leaves ~1e-30
    div = np.abs(divergence(out).values).max()
    if div > 1e-10 * max(np.abs(u.values).max(), 1e-300):
        raise ArithmeticError(f"projection left max|div| = {div:.3e}")
    object.__setattr__(out, "divergence_free", True)
    return out


def cutoff_profile(rho):
    """Radial cut-off: 1 on [0,1], cos^2 ramp on (1,2), 0 beyond."""
    rho = np.asarray(rho, dtype=float)
    ramp = np.cos(0.5 * np.pi * np.clip(rho - 1.0, 0.0, 1.0)) ** 2
    return np.where(rho <= 1.0, 1.0, np.where(rho >= 2.0, 0.0, ramp))


@dataclass(frozen=True)
class FrequencyCutoff:
    """Low-pass multiplier chi(|xi| / 2^level)."""

    level: int

    @property
    def radius(self) -> float:
        return 2.0**self.level

    def multiplier(self, grid: Grid) -> np.ndarray:
        return cutoff_profile(grid.kmag / self.radius)


def lowpass_split(f: Field, cutoff: FrequencyCutoff) -> tuple[Field, Field]:
    """Split ``f`` into (low, high) with low + high == f."""
    grid = f.grid
    band_edge = (grid.n // 2) * grid.k_unit
    if not 2.0 ** (cutoff.level + 1) < band_edge:
        raise ValueError(
            f"cutoff level {cutoff.level} puts the ramp edge 2^{cutoff.level + 1} "
            f"outside the resolved band |k| < {band_edge:g}"
        )
    m = cutoff.multiplier(grid)
    low = f.coeffs * m
    return _like(f, low), _like(f, f.coeffs - low)


def rescale_field(f: Field, lam: int, degree: int = 1) -> Field:
    """Return lam**degree * f(lam x); the mode at k moves to lam*k.

    ``degree`` is 1 for velocity and 2 for pressure.
    """
    if int(lam) != lam or lam < 1:
        raise ValueError(f"rescaling factor must be a positive integer, got {lam}")
    lam = int(lam)
    if lam == 1:
        return _like(f, f.coeffs)
    n = f.grid.n
    idx = f.grid.mode_index
    fits = np.abs(lam * idx) < n // 2
    src = np.nonzero(fits)[0]
    dst = (lam * idx[src]) % n
    c = f.coeffs
    lead = c.shape[:-3]
    peak = np.abs(c).max()
    outside = np.abs(c).copy()
    outside[(...,) + np.ix_(src, src, src)] = 0.0
    if peak > 0 and outside.max() > RESCALE_SIGNIFICANCE * peak:
        raise ValueError(
            f"rescaling by {lam} aliases: a mode of relative size "
            f"{outside.max() / peak:.2e} maps beyond the grid band |k| < {n // 2}"
        )
    out = np.zeros(lead + (n, n, n), dtype=complex)
    out[(...,) + np.ix_(dst, dst, dst)] = lam**degree * c[(...,) + np.ix_(src, src, src)]
    if isinstance(f, VectorField):
        return VectorField(f.grid, out, f.divergence_free)
    return ScalarField(f.grid, out)


def rescale(obj, lam: int, **kw):
    """Parabolic rescaling u -> lam u(lam x, lam^2 t) of a field or trajectory."""
    from .cylinders import Trajectory, rescale_trajectory

    if isinstance(obj, Trajectory):
        return rescale_trajectory(obj, lam, **kw)
    return rescale_field(obj, lam, **kw)


def band_limited_random(grid: Grid, kmax: int, rng: np.random.Generator,
                        vector: bool = False, slope: float = 0.0) -> Field:
    """Random real mean-zero field with modes |k_i| <= kmax (integer units).

    Coefficients depend only on ``rng`` and ``kmax``, not on ``grid.n``, so the
    same draw yields the same function on any grid that resolves it.
    """
    if not kmax < grid.n // 2:
        raise ValueError(f"kmax={kmax} not resolved on n={grid.n}")
    m = 2 * kmax + 1
    ncomp = 3 if vector else 1
    raw = rng.standard_normal((ncomp, m, m, m)) + 1j * rng.standard_normal((ncomp, m, m, m))
    ks = np.arange(-kmax, kmax + 1)
    kk = np.sqrt(ks[:, None, None] ** 2 + ks[None, :, None] ** 2 + ks[None, None, :] ** 2)
    raw *= np.where(kk > 0, np.maximum(kk, 1.0) ** (-slope), 0.0)
    # Hermitian symmetrization: c_{-k} = conj(c_k)
    herm = 0.5 * (raw + np.conj(raw[:, ::-1, ::-1, ::-1]))
    out = np.zeros((ncomp,) + (grid.n,) * 3, dtype=complex)
    sel = ks % grid.n
    out[(slice(None),) + np.ix_(sel, sel, sel)] = herm
    if vector:
        return VectorField(grid, out)
    return ScalarField(grid, out[0])


def resample(f: Field, grid: Grid) -> Field:
    """The same trigonometric polynomial on another grid (zero-pad or truncate).

    Truncation drops the modes the target grid cannot hold, including its
    Nyquist planes.
    """
    if grid.length != f.grid.length:
        raise ValueError("resampling keeps the box length fixed")
    src = f.grid.mode_index
    keep = np.abs(src) < min(f.grid.n, grid.n) // 2
    s = np.nonzero(keep)[0]
    d = src[s] % grid.n
    lead = f.coeffs.shape[:-3]
    out = np.zeros(lead + (grid.n,) * 3, dtype=complex)
    out[(...,) + np.ix_(d, d, d)] = f.coeffs[(...,) + np.ix_(s, s, s)]
    if isinstance(f, VectorField):
        return VectorField(grid, out, f.divergence_free)
    return ScalarField(grid, out)
