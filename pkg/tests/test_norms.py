import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from nscrit import norms
from nscrit.norms import BallSpec, BesovParams
from nscrit.spectral_core import (
    Grid,
    ScalarField,
    VectorField,
    band_limited_random,
    derivative,
)

from conftest import sin_field

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def ball_weight(y, R):
    """Density of the x1 offset inside a ball of radius R: area of the slice / volume."""
    return math.pi * (R * R - y * y) / (4 / 3 * math.pi * R**3)


def sin_oscillation_oracle(a, R):
    """Mean oscillation of sin(x1) over the continuous ball B((a, *, *), R)."""
    mean = integrate.quad(lambda y: math.sin(a + y) * ball_weight(y, R), -R, R)[0]
    return integrate.quad(lambda y: abs(math.sin(a + y) - mean) * ball_weight(y, R),
                          -R, R, limit=200)[0]


def sin_carleson_oracle(radii, centers, derivative_form):
    """Carleson sup for sin(x1) (or the gradient of sin(x1)) by direct quadrature."""
    best = 0.0
    for R in radii:
        for a in centers:
            g = (lambda y: math.cos(a + y) ** 2) if derivative_form else \
                (lambda y: math.sin(a + y) ** 2)
            avg = integrate.quad(lambda y: g(y) * ball_weight(y, R), -R, R)[0]
            best = max(best, avg * integrate.quad(lambda t: math.exp(-2 * t), 0, R * R)[0])
    return math.sqrt(best)


def lp_sin(p):
    """||sin x1||_{L^p(T^3)} by quadrature."""
    return ((2 * math.pi) ** 2 * integrate.quad(lambda x: abs(math.sin(x)) ** p,
                                                0, 2 * math.pi, limit=200)[0]) ** (1 / p)


def besov_sin_oracle(s, p, q):
    c = lp_sin(p)
    if math.isinf(q):
        # tau^a e^{-tau} peaks at tau = a
        return c * (-s / 2 / math.e) ** (-s / 2)
    val = integrate.quad(lambda t: (t ** (-s / 2) * math.exp(-t)) ** q / t, 0, np.inf)[0]
    return c * val ** (1 / q)


class TestLebesgue:
    def test_sin_closed_forms(self, grid16):
        f = sin_field(grid16)
        assert norms.lebesgue_norm(f, 2) == pytest.approx((2 * np.pi) ** 1.5 / np.sqrt(2), rel=1e-13)
        assert norms.lebesgue_norm(f, 4) ** 4 == pytest.approx(3 / 8 * (2 * np.pi) ** 3, rel=1e-12)
        assert norms.lebesgue_norm(f, np.inf) == pytest.approx(1.0, abs=1e-2)

    def test_vector_uses_magnitude(self, grid16):
        x1 = grid16.mesh()[0]
        u = VectorField.from_values(grid16, np.stack([np.sin(x1), np.cos(x1), 0 * x1]))
        assert norms.lebesgue_norm(u, 3) == pytest.approx((2 * np.pi) ** 1.0, rel=1e-12)

    def test_ball_region_of_constant(self, grid32):
        f = ScalarField.from_values(grid32, np.ones((32,) * 3))
        r = 2.0
        count = len(norms.ball_values(f.values, grid32, BallSpec((0.0, 0.0, 0.0), r)))
        expected = math.sqrt(count * grid32.cell_volume)
        assert norms.lebesgue_norm(f, 2, BallSpec((0.0, 0.0, 0.0), r)) == pytest.approx(expected)
        assert count * grid32.cell_volume == pytest.approx(4 * math.pi / 3 * r**3, rel=0.05)

    def test_rejects_p_below_one(self, grid16):
        with pytest.raises(ValueError):
            norms.lebesgue_norm(sin_field(grid16), 0.5)

    def test_ball_validation(self, grid16):
        with pytest.raises(ValueError):
            norms.lebesgue_norm(sin_field(grid16), 2, BallSpec((0.0, 0.0, 0.0), 4.0))
        with pytest.raises(ValueError, match="unresolved"):
            norms.lebesgue_norm(sin_field(grid16), 2, BallSpec((0.0, 0.0, 0.0), 0.5))


class TestOscillation:
    def test_linear_profile(self):
        g = Grid(64)
        R = 8 * g.spacing
        got = norms.mean_oscillation(sin_field(g), BallSpec((0.0, 1.0, 2.0), R))
        assert got == pytest.approx(sin_oscillation_oracle(0.0, R), rel=0.05)
        assert got == pytest.approx(3 * R / 8, rel=0.05)

    def test_quadratic_at_extremum(self):
        g = Grid(64)
        c = (np.pi / 2, 0.0, 0.0)
        small = norms.mean_oscillation(sin_field(g), BallSpec(c, 4 * g.spacing))
        big = norms.mean_oscillation(sin_field(g), BallSpec(c, 8 * g.spacing))
        assert 3.5 < big / small < 4.5

    def test_bounded_by_twice_sup(self, grid16):
        f = band_limited_random(grid16, 5, np.random.default_rng(0))
        assert norms.bmo_norm_oscillation(f) <= 2 * np.abs(f.values).max()

    @settings(max_examples=10, deadline=None)
    @given(seed=seeds, shift=st.floats(-5, 5))
    def test_constant_shift_invariance(self, seed, shift):
        g = Grid(16)
        f = band_limited_random(g, 4, np.random.default_rng(seed))
        shifted = ScalarField.from_values(g, f.values + shift)
        assert norms.bmo_norm_oscillation(shifted) == pytest.approx(
            norms.bmo_norm_oscillation(f), rel=1e-9, abs=1e-12)

    def test_sin_against_dense_oracle(self, grid32):
        got = norms.bmo_norm_oscillation(sin_field(grid32))
        radii = norms.default_radii(grid32)
        exact = max(sin_oscillation_oracle(a, R) for R in radii for a in grid32.x1d[::4])
        assert got == pytest.approx(exact, rel=0.05)

    def test_q_two_dominates_q_one(self, grid16):
        f = band_limited_random(grid16, 4, np.random.default_rng(2))
        assert norms.bmo_norm_oscillation(f, q=2.0) >= norms.bmo_norm_oscillation(f) * (1 - 1e-12)

    def test_bad_q(self, grid16):
        with pytest.raises(ValueError):
            norms.mean_oscillation(sin_field(grid16), BallSpec((0.0, 0.0, 0.0), 2.0), q=0.5)


class TestVMO:
    def test_radius_below_resolution(self, grid16):
        with pytest.raises(ValueError, match="unresolved"):
            norms.vmo_defect(sin_field(grid16), 3 * grid16.spacing)

    def test_smooth_defect_scales_with_radius(self):
        g = Grid(64)
        f = sin_field(g)
        grad_max = 1.0
        defects = [norms.vmo_defect(f, R) for R in (4 * g.spacing, 8 * g.spacing)]
        for R, d in zip((4 * g.spacing, 8 * g.spacing), defects):
            assert d <= R * grad_max
        assert defects[1] / defects[0] == pytest.approx(2, rel=0.1)

    def test_steep_front_plateaus(self):
        g = Grid(64)
        x1 = g.mesh()[0]
        f = ScalarField.from_values(g, np.tanh(20 * np.sin(x1)))
        radii = [4 * g.spacing, 8 * g.spacing]
        d = [norms.vmo_defect(f, R, center_stride=2) for R in radii]
        # a resolved jump keeps an O(1) oscillation as R shrinks
        assert min(d) > 0.5
        assert d[1] / d[0] < 1.3


class TestCarleson:
    def test_bmo_of_sin(self, grid32):
        radii = norms.default_radii(grid32)
        got = norms.bmo_carleson_norm(sin_field(grid32))
        exact = sin_carleson_oracle(radii, grid32.x1d[::4], True)
        assert got == pytest.approx(exact, rel=0.02)

    def test_bmo_minus1_of_sin(self, grid32):
        radii = norms.default_radii(grid32)
        got = norms.bmo_minus1_norm(sin_field(grid32))
        exact = sin_carleson_oracle(radii, grid32.x1d[::4], False)
        assert got == pytest.approx(exact, rel=0.02)

    def test_dense_radii_near_continuum(self, grid32):
        radii = np.linspace(4 * grid32.spacing, np.pi, 12)
        got = norms.bmo_minus1_norm(sin_field(grid32), radii=radii)
        # continuum sup over all centers and radii, by a fine scan
        dense = sin_carleson_oracle(np.linspace(0.5, np.pi, 60), np.linspace(0, np.pi, 61), False)
        assert got == pytest.approx(dense, rel=0.03)
        assert got <= dense * 1.01

    def test_time_weights_accuracy(self):
        taus = np.geomspace(1e-4, 10, 64)
        nodes, w = norms.carleson_time_weights(taus, 2.0)
        assert nodes[0] == 0 and nodes[-1] == 2.0
        assert w.sum() == pytest.approx(2.0, rel=1e-2)
        assert np.dot(w, np.exp(-nodes)) == pytest.approx(1 - math.exp(-2), rel=1e-2)

    @pytest.mark.parametrize("seed", range(20))
    def test_derivative_bounded_by_gradient_form(self, seed):
        g = Grid(16)
        f = band_limited_random(g, 4, np.random.default_rng(seed))
        lhs = norms.bmo_minus1_norm(derivative(f, 0))
        assert lhs <= norms.bmo_carleson_norm(f) * (1 + 1e-12)

    def test_requires_mean_zero(self, grid16):
        f = ScalarField.from_values(grid16, sin_field(grid16).values + 1)
        with pytest.raises(ValueError, match="mean-zero"):
            norms.bmo_minus1_norm(f)
        with pytest.raises(ValueError, match="mean-zero"):
            norms.besov_norm(f, BesovParams(-0.5, 4, 4))

    def test_vector_field(self, grid16):
        u = VectorField.from_values(grid16, np.stack([sin_field(grid16).values] + [np.zeros((16,) * 3)] * 2))
        assert norms.bmo_minus1_norm(u) == pytest.approx(norms.bmo_minus1_norm(sin_field(grid16)))


class TestBesov:
    @pytest.mark.parametrize("s, p", [(-0.5, 4.0), (-0.25, 6.0), (-1.0, 2.0)])
    def test_supremum_refined(self, grid32, s, p):
        got = norms.besov_norm(sin_field(grid32), BesovParams(s, p, np.inf), refine=True)
        assert got == pytest.approx(besov_sin_oracle(s, p, np.inf), rel=1e-6)

    @pytest.mark.parametrize("s, p, q", [(-0.5, 4.0, 4.0), (-0.5, 6.0, 6.0), (-1.0, 3.0, 2.0)])
    def test_integral_form(self, grid32, s, p, q):
        params = BesovParams(s, p, q, n_tau=128, tau_min=1e-5)
        got = norms.besov_norm(sin_field(grid32), params)
        assert got == pytest.approx(besov_sin_oracle(s, p, q), rel=1e-2)

    def test_unrefined_below_refined(self, grid32):
        params = BesovParams(-0.5, 4.0, np.inf)
        f = sin_field(grid32)
        assert norms.besov_norm(f, params) <= norms.besov_norm(f, params, refine=True)

    @pytest.mark.parametrize("kwargs", [dict(s=0.1, p=4, q=4), dict(s=-0.5, p=1, q=4),
                                        dict(s=-0.5, p=np.inf, q=4), dict(s=-0.5, p=4, q=0.5)])
    def test_bad_params(self, kwargs):
        with pytest.raises(ValueError):
            BesovParams(**kwargs)

    def test_profile_shape(self, grid16):
        taus, g = norms.besov_profile(sin_field(grid16), BesovParams(-0.5, 4, 4, n_tau=16))
        assert taus.shape == g.shape == (16,)
        assert np.all(np.diff(np.log(taus)) > 0)

    def test_degree_one_homogeneity(self, grid16):
        f = band_limited_random(grid16, 4, np.random.default_rng(5))
        params = BesovParams(-0.5, 4, 4)
        assert norms.besov_norm(3 * f, params) == pytest.approx(3 * norms.besov_norm(f, params))


class TestEmbedding:
    def test_sin_p6(self, grid32):
        got = norms.embedding_ratio(sin_field(grid32), 6.0, 6.0)
        radii = norms.default_radii(grid32)
        exact = sin_carleson_oracle(radii, grid32.x1d[::4], False) / besov_sin_oracle(-0.5, 6, 6)
        assert got == pytest.approx(exact, rel=0.03)

    @pytest.mark.parametrize("p, q", [(3.0, 3.0), (2.0, 2.0), (np.inf, 4.0), (4.0, np.inf), (4.0, 0.5)])
    def test_invalid_exponents(self, grid16, p, q):
        with pytest.raises(ValueError):
            norms.embedding_ratio(sin_field(grid16), p, q)

    def test_zero_field(self, grid16):
        assert norms.embedding_ratio(ScalarField.zeros(grid16), 4, 4) == 0.0
        assert norms.embedding_ratios(ScalarField.zeros(grid16), [4, 6]) == {4: 0.0, 6: 0.0}

    def test_batched_matches_single(self, grid16):
        f = band_limited_random(grid16, 4, np.random.default_rng(7))
        batch = norms.embedding_ratios(f, [4.0, 6.0])
        for p in (4.0, 6.0):
            assert batch[p] == pytest.approx(norms.embedding_ratio(f, p, p), rel=1e-12)

    def test_scale_invariant_under_amplitude(self, grid16):
        f = band_limited_random(grid16, 4, np.random.default_rng(8))
        assert norms.embedding_ratio(5 * f, 4, 4) == pytest.approx(norms.embedding_ratio(f, 4, 4))


class TestInterpolation:
    @pytest.mark.parametrize("p", [4.0, 6.0, 12.0])
    def test_exponent(self, p):
        theta = norms.interpolation_exponent(p)
        # balances the two dyadic bounds: N(1 - 3/p) theta = N (1 - theta)
        assert (1 - 3 / p) * theta == pytest.approx(1 - theta)
        assert theta == p / (2 * p - 3)

    @pytest.mark.parametrize("seed", range(5))
    def test_record(self, grid32, seed):
        u = band_limited_random(grid32, 4, np.random.default_rng(seed))
        rec = norms.interp_check(u, 4.0)
        assert rec.levels == [0, 1, 2]
        assert all(c <= 1 + 1e-12 for c in rec.high_constants)
        assert rec.best_constant > 0
        assert rec.lhs <= norms.lebesgue_norm(u, 2)

    def test_rejects_bad_p(self, grid32):
        with pytest.raises(ValueError):
            norms.interp_check(sin_field(grid32), 3.0)

    def test_zero_field(self, grid32):
        rec = norms.interp_check(ScalarField.zeros(grid32), 4.0)
        assert rec.best_constant is None and rec.low_constants == [None] * 3


class TestEvaluateNorm:
    def test_lebesgue(self, grid16):
        rep = norms.evaluate_norm("lebesgue", sin_field(grid16), p=2)
        assert rep.value == pytest.approx(norms.lebesgue_norm(sin_field(grid16), 2))
        assert rep.discretization == {"n": 16, "L": grid16.length}

    def test_besov_records_tau(self, grid16):
        rep = norms.evaluate_norm("besov", sin_field(grid16), params=BesovParams(-0.5, 4, 4))
        assert rep.discretization["tau"][2] == 64
        assert "params" not in rep.params

    def test_bmo_records_radii(self, grid16):
        rep = norms.evaluate_norm("bmo_minus1", sin_field(grid16), center_stride=2)
        assert rep.discretization["center_stride"] == 2
        assert rep.discretization["radii"][0] == pytest.approx(4 * grid16.spacing)

    def test_unknown(self, grid16):
        with pytest.raises(ValueError, match="unknown norm"):
            norms.evaluate_norm("sobolev", sin_field(grid16))
