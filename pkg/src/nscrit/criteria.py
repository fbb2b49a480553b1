"""Hypothesis monitors for epsilon-regularity criteria on stored trajectories.

Every monitor measures the scale-invariant quantities a criterion assumes and
compares them with thresholds.  A verdict only says whether the hypothesis is
satisfied on the data; it never certifies regularity.

The unit cylinder Q_1(z0) of the analytic statements is realized as
Q_{r_unit}(z0); the radius bounds 1/2 and (C + D)^{-2} are multiplied by
r_unit.  z0 is written (x1, x2, x3, t).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .cylinders import (
    G,
    H,
    ParabolicCylinder,
    Trajectory,
    WindowError,
    cylinder_quantities,
    field_series,
    radius_sweep,
    rescale_trajectory,
    space_time_norm,
)

INVARIANCE_FLOOR = 1e-14


class ExponentError(ValueError):
    """(p, q) lies outside the window a criterion is stated for."""


@dataclass(frozen=True)
class CriterionConfig:
    eps0: float = 1e-2
    eps1: float = 1e-2
    eps: float = 1e-2
    M: float | None = None
    c: float = 1e-2
    p: float = 3.0
    q: float = float("inf")
    r_unit: float | None = None
    sweep_count: int = 8
    sweep_min_frac: float = 1 / 16

    def __post_init__(self) -> None:
        for name in ("eps0", "eps1", "eps", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"threshold {name} must be positive, got {getattr(self, name)}")
        if self.M is not None and not self.M > 0:
            raise ValueError(f"M must be positive, got {self.M}")
        if self.r_unit is not None and not self.r_unit > 0:
            raise ValueError(f"r_unit must be positive, got {self.r_unit}")
        if self.sweep_count < 1 or not 0 < self.sweep_min_frac < 1:
            raise ValueError("radius sweep needs count >= 1 and 0 < min_frac < 1")

    def unit(self, traj: Trajectory) -> float:
        return traj.grid.length / 4 if self.r_unit is None else self.r_unit

    def sweep(self, r_max: float) -> np.ndarray:
        return radius_sweep(r_max, self.sweep_count, self.sweep_min_frac)


@dataclass
class CriterionVerdict:
    criterion: str
    measured: dict
    thresholds: dict
    hypothesis_satisfied: bool
    witnesses: dict = field(default_factory=dict)

    @property
    def text(self) -> str:
        return "hypothesis satisfied" if self.hypothesis_satisfied else "hypothesis violated"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.text
        return _plain(d)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    return obj


# ---------------------------------------------------------------- exponent gates

def exponent_index(p: float, q: float) -> Fraction | float:
    """3/p + 2/q, exact for finite rational inputs."""
    if not (p >= 1 and q >= 1):
        raise ExponentError(f"exponents must satisfy p, q >= 1, got ({p}, {q})")
    a = Fraction(0) if np.isinf(p) else 3 / Fraction(p)
    b = Fraction(0) if np.isinf(q) else 2 / Fraction(q)
    return a + b


def gkt_velocity_admissible(p: float, q: float) -> bool:
    try:
        s = exponent_index(p, q)
    except ExponentError:
        return False
    return 1 <= s <= 2


def gkt_vorticity_admissible(p: float, q: float) -> bool:
    try:
        s = exponent_index(p, q)
    except ExponentError:
        return False
    return 2 <= s <= 3 and not (p == 1 and np.isinf(q))


def theorem12_admissible(p: float, q: float) -> bool:
    try:
        s = exponent_index(p, q)
    except ExponentError:
        return False
    return 1 <= s < 2 and q > 1


def type1_admissible(p: float, q: float) -> bool:
    """3/p + 2/q <= 1 with p >= 3 (p = 3 forces q = inf)."""
    try:
        s = exponent_index(p, q)
    except ExponentError:
        return False
    return s <= 1 and p >= 3


def _require(ok: bool, what: str, p: float, q: float) -> None:
    if not ok:
        s = exponent_index(p, q) if p >= 1 and q >= 1 else float("nan")
        raise ExponentError(f"{what}: (p, q) = ({p}, {q}) with 3/p + 2/q = {float(s):.6g} "
                            f"is outside the admissible window")


# ---------------------------------------------------------------- helpers

def _z0(traj: Trajectory, z0) -> tuple[tuple, float]:
    if z0 is None:
        return (0.0, 0.0, 0.0), float(traj.times[-1])
    if len(z0) != 4:
        raise ValueError(f"z0 must be (x1, x2, x3, t), got {z0}")
    return tuple(float(v) for v in z0[:3]), float(z0[3])


def _cyl(center, t0, r) -> ParabolicCylinder:
    return ParabolicCylinder(center, t0, float(r))


def _z0_echo(center, t0) -> list:
    return [*center, t0]


# ---------------------------------------------------------------- monitors

def ckn_test(traj: Trajectory, z0=None, r_unit: float | None = None, eps0: float = 1e-2,
             oscillation: bool = False) -> CriterionVerdict:
    """C(u, r_unit) + D(pi, r_unit) <= eps0.

    With ``oscillation`` the pressure is replaced by pi minus its ball mean.
    """
    center, t0 = _z0(traj, z0)
    r = traj.grid.length / 4 if r_unit is None else r_unit
    q = cylinder_quantities(traj, _cyl(center, t0, r))
    d = q.D_osc if oscillation else q.D
    total = q.C + d
    return CriterionVerdict(
        "ckn_oscillation" if oscillation else "ckn",
        {"C": q.C, "D": d, "C_plus_D": total},
        {"eps0": eps0},
        bool(total <= eps0),
        {"z0": _z0_echo(center, t0), "r_unit": r},
    )


def gkt_test(traj: Trajectory, z0=None, p: float = 3.0, q: float = float("inf"),
             radii: Sequence[float] | None = None, eps1: float = 1e-2,
             mode: str = "velocity", r_unit: float | None = None) -> CriterionVerdict:
    """max over 0 < r < r_unit/2 of G(u, p, q; r) (or H(curl u, p, q; r)) <= eps1."""
    if mode == "velocity":
        _require(gkt_velocity_admissible(p, q), "gkt velocity mode", p, q)
    elif mode == "vorticity":
        _require(gkt_vorticity_admissible(p, q), "gkt vorticity mode", p, q)
    else:
        raise ValueError(f"mode must be 'velocity' or 'vorticity', got {mode!r}")
    center, t0 = _z0(traj, z0)
    unit = traj.grid.length / 4 if r_unit is None else r_unit
    radii = radius_sweep(unit / 2) if radii is None else np.asarray(radii, dtype=float)
    if np.any(radii >= unit / 2) or np.any(radii <= 0):
        raise ValueError("gkt radii must lie in (0, r_unit/2)")
    vals = [G(traj, "u", p, q, _cyl(center, t0, r)) if mode == "velocity"
            else H(traj, "vorticity", p, q, _cyl(center, t0, r)) for r in radii]
    j = int(np.argmax(vals))
    return CriterionVerdict(
        f"gkt_{mode}",
        {"max_quantity": vals[j], "profile": vals},
        {"eps1": eps1, "p": p, "q": q},
        bool(vals[j] <= eps1),
        {"z0": _z0_echo(center, t0), "r_max_witness": float(radii[j]),
         "radii": list(radii), "r_unit": unit},
    )


def theorem12_endpoint(C_plus_D: float, r_unit: float) -> float:
    """min{1/2, (C + D)^{-2}} r_unit."""
    bound = 0.5 if C_plus_D <= 0 else min(0.5, C_plus_D**-2.0)
    return bound * r_unit


def theorem12_monitor(traj: Trajectory, z0=None, p: float = 3.0, q: float = float("inf"),
                      M: float | None = None, eps: float = 1e-2,
                      r_unit: float | None = None, radii: Sequence[float] | None = None,
                      star_radii: Sequence[float] | None = None) -> CriterionVerdict:
    """sup_r G(u, p, q; r) <= M and some admissible r* with G(u3, p, q; r*) <= eps.

    ``M`` defaults to the measured supremum (M estimated from data).  The
    candidates for r* default to a geometric sweep below the endpoint
    min{1/2, (C + D)^{-2}} r_unit.
    """
    _require(theorem12_admissible(p, q), "theorem12_monitor", p, q)
    center, t0 = _z0(traj, z0)
    unit = traj.grid.length / 4 if r_unit is None else r_unit
    radii = radius_sweep(unit) if radii is None else np.asarray(radii, dtype=float)
    sup_g = max(G(traj, "u", p, q, _cyl(center, t0, r)) for r in radii)
    uq = cylinder_quantities(traj, _cyl(center, t0, unit))
    cd = uq.C + uq.D
    end = theorem12_endpoint(cd, unit)
    star = radius_sweep(end) if star_radii is None else np.asarray(star_radii, dtype=float)
    if np.any(star >= end):
        raise ValueError(f"r* candidates must lie below the endpoint {end:.6g}")
    g3 = [G(traj, "u3", p, q, _cyl(center, t0, r)) for r in star]
    j = int(np.argmin(g3))
    m = sup_g if M is None else M
    return CriterionVerdict(
        "theorem12",
        {"sup_G_u": sup_g, "C_plus_D_unit": cd, "r_star_endpoint": end, "min_G_u3": g3[j]},
        {"M": m, "M_estimated": M is None, "eps": eps, "p": p, "q": q},
        bool(sup_g <= m and g3[j] <= eps),
        {"z0": _z0_echo(center, t0), "r_star": float(star[j]), "r_unit": unit},
    )


def theorem13_monitor(traj: Trajectory, z0=None, M: float | None = None, eps: float = 1e-2,
                      r_unit: float | None = None) -> CriterionVerdict:
    """C(u, r_unit) + D(pi, r_unit) <= M and G(u3, 1, 1; r_unit) <= eps.

    G(u3, 1, 1; r) = r^{-4} ||u3||_{L^1(Q_r)} is the scale-invariant L^1 norm.
    """
    center, t0 = _z0(traj, z0)
    unit = traj.grid.length / 4 if r_unit is None else r_unit
    cyl = _cyl(center, t0, unit)
    uq = cylinder_quantities(traj, cyl)
    cd = uq.C + uq.D
    l1 = G(traj, "u3", 1.0, 1.0, cyl)
    m = cd if M is None else M
    return CriterionVerdict(
        "theorem13",
        {"C_plus_D": cd, "u3_L1": l1},
        {"M": m, "M_estimated": M is None, "eps": eps},
        bool(cd <= m and l1 <= eps),
        {"z0": _z0_echo(center, t0), "r_unit": unit},
    )


def lemma_c_threshold(r0: float, eps0: float, c: float) -> float:
    """c eps0^{9/5} r0^{8/5}."""
    return c * eps0**1.8 * r0**1.6


def lemma_c_test(traj: Trajectory, r0: float, eps0: float = 1e-2, c: float = 1e-2,
                 M: float | None = None, z0=None, r_unit: float | None = None) -> CriterionVerdict:
    """C(u, r0 r_unit) <= c eps0^{9/5} r0^{8/5}, after checking D(pi, r_unit) <= M."""
    if not 0 < r0 <= 1:
        raise ValueError(f"r0 must lie in (0, 1], got {r0}")
    center, t0 = _z0(traj, z0)
    unit = traj.grid.length / 4 if r_unit is None else r_unit
    d_unit = cylinder_quantities(traj, _cyl(center, t0, unit)).D
    m = d_unit if M is None else M
    c_r0 = cylinder_quantities(traj, _cyl(center, t0, r0 * unit)).C
    thr = lemma_c_threshold(r0, eps0, c)
    return CriterionVerdict(
        "lemma_c",
        {"C_r0": c_r0, "D_unit": d_unit, "threshold": thr},
        {"eps0": eps0, "c": c, "M": m, "M_estimated": M is None},
        bool(d_unit <= m and c_r0 <= thr),
        {"z0": _z0_echo(center, t0), "r0": r0, "r_unit": unit},
    )


def type1_monitor(traj: Trajectory, M: float | None = None, eps: float = 1e-2,
                  mode: str = "integrable", p: float = float("inf"), q: float = 2.0,
                  center=(0.0, 0.0, 0.0), r_unit: float | None = None) -> CriterionVerdict:
    """Type-I bound sup sqrt(-t)|u_h| <= M on Q_{r_unit}((center, 0)) and a u3 condition.

    mode 'integrable': ||u3||_{L^q_t L^p_x(Q_{r_unit})} finite, 3/p + 2/q <= 1.
    mode 'pointwise': sup sqrt(-t)|u3| <= eps.
    The trajectory must end at t = 0, the candidate singular time.
    """
    if mode not in ("integrable", "pointwise"):
        raise ValueError(f"mode must be 'integrable' or 'pointwise', got {mode!r}")
    if mode == "integrable":
        _require(type1_admissible(p, q), "type1_monitor", p, q)
    times = traj.times
    tol = 1e-9 * max(traj.dt, 1e-300)
    if abs(times[-1]) > tol:
        raise WindowError(f"type-I monitor needs a series ending at t = 0, got {times[-1]:.6g}")
    unit = traj.grid.length / 4 if r_unit is None else r_unit
    if times[0] > -unit**2 + tol:
        raise WindowError(f"series starts at {times[0]:.6g}, after -r_unit^2 = {-unit**2:.6g}")
    grid = traj.grid
    L = grid.length
    disp = [((x - c + L / 2) % L) - L / 2 for x, c in zip(grid.mesh(), center)]
    inside = sum(d**2 for d in disp) < unit**2
    sup_h = sup_3 = 0.0
    for t, u in zip(times, traj.velocity):
        if t < -unit**2 - tol or t >= -tol:
            continue
        v = u.values
        w = np.sqrt(-t)
        sup_h = max(sup_h, w * float(np.sqrt(v[0] ** 2 + v[1] ** 2)[inside].max()))
        sup_3 = max(sup_3, w * float(np.abs(v[2])[inside].max()))
    m = sup_h if M is None else M
    measured = {"sup_sqrt_t_uh": sup_h, "sup_sqrt_t_u3": sup_3}
    thresholds = {"M": m, "M_estimated": M is None, "eps": eps}
    if mode == "integrable":
        series = field_series(traj, "u3")
        norm = space_time_norm(times, series, p, q, _cyl(center, 0.0, unit))
        measured["u3_LqLp"] = norm
        thresholds.update(p=p, q=q)
        ok = sup_h <= m and np.isfinite(norm)
    else:
        ok = sup_h <= m and sup_3 <= eps
    return CriterionVerdict(f"type1_{mode}", measured, thresholds, bool(ok),
                            {"z0": [*map(float, center), 0.0], "r_unit": unit})


# ---------------------------------------------------------------- scaling invariance

QUANTITIES = ("A", "C", "E", "D", "G", "H")


@dataclass
class InvarianceRow:
    quantity: str
    lam: int
    r: float
    rescaled: float
    reference: float
    rel_error: float


def scaling_invariance_report(traj: Trajectory, lambdas: Sequence[int], radii: Sequence[float],
                              quantities: Sequence[str] = QUANTITIES, center=(0.0, 0.0, 0.0),
                              t0: float = 0.0, p: float = 4.0, q: float = 4.0
                              ) -> list[InvarianceRow]:
    """Compare Q(u_lam, r, z0) with lam^k Q(u, lam r, z0_lam) for every combination.

    z0_lam = (lam x0, lam^2 t0); k = -1 for H(u) and 0 for the others.  The
    relative error uses max(|reference|, 1e-14) as denominator.
    """
    bad = set(quantities) - set(QUANTITIES)
    if bad:
        raise ValueError(f"unknown quantities {sorted(bad)}")
    rows = []
    r_max = max(radii)
    for lam in lambdas:
        if int(lam) != lam or lam < 1:
            raise ValueError(f"lambda must be a positive integer, got {lam}")
        lam = int(lam)
        scaled = traj if lam == 1 else rescale_trajectory(traj, lam, window=(t0 - r_max**2, t0))
        big_center = tuple(lam * c for c in center)
        for r in radii:
            small = _cyl(center, t0, r)
            big = _cyl(big_center, lam**2 * t0, lam * r)
            qa = qb = None
            for name in quantities:
                if name in "ACED":
                    qa = qa or cylinder_quantities(scaled, small)
                    qb = qb or cylinder_quantities(traj, big)
                    a, b = getattr(qa, name), getattr(qb, name)
                elif name == "G":
                    a, b = G(scaled, "u", p, q, small), G(traj, "u", p, q, big)
                else:
                    a, b = H(scaled, "u", p, q, small), H(traj, "u", p, q, big) / lam
                err = abs(a - b) / max(abs(b), INVARIANCE_FLOOR)
                rows.append(InvarianceRow(name, lam, float(r), float(a), float(b), float(err)))
    return rows


def evaluate_all(traj: Trajectory, config: CriterionConfig, z0=None) -> list[CriterionVerdict]:
    """The default monitor battery used by the diagnose command."""
    unit = config.unit(traj)
    out = [
        ckn_test(traj, z0, unit, config.eps0),
        ckn_test(traj, z0, unit, config.eps0, oscillation=True),
    ]
    if gkt_velocity_admissible(config.p, config.q):
        out.append(gkt_test(traj, z0, config.p, config.q, config.sweep(unit / 2),
                            config.eps1, "velocity", unit))
    if theorem12_admissible(config.p, config.q):
        out.append(theorem12_monitor(traj, z0, config.p, config.q, config.M, config.eps, unit,
                                     config.sweep(unit)))
    out.append(theorem13_monitor(traj, z0, config.M, config.eps, unit))
    out.append(lemma_c_test(traj, 0.5, config.eps0, config.c, config.M, z0, unit))
    return out
