import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multiblowup.errors import ConfigError
from multiblowup.profiles import (
    ProfileFamily,
    gamma_b,
    geometry,
    psi_b_product_formula,
    solve_modified_profile,
    solve_radiation,
    theta_weight,
)


def interior_ratio(p):
    inner = p.radial_grid <= p.geometry.R_b_minus
    num = p.integrate(np.where(inner, np.abs(p.psi) ** 2, 0.0))
    return math.sqrt(num / p.integrate(np.abs(p.psi) ** 2))


def annulus_norm(p):
    ann = p.radial_grid >= p.geometry.R_b_minus
    return math.sqrt(p.integrate(np.where(ann, np.abs(p.psi) ** 2, 0.0)))


class TestGeometry:
    def test_radii(self):
        g = geometry(0.2, eta=0.01)
        assert g.R_b == pytest.approx(10 * math.sqrt(0.99))
        assert g.R_b_minus == pytest.approx(0.99 * 10)
        assert g.A_b == pytest.approx(math.exp(0.1 * math.pi / 0.2))

    def test_zero_b_is_unbounded(self):
        g = geometry(0.0)
        assert math.isinf(g.R_b) and math.isinf(g.A_b)

    @pytest.mark.parametrize("eta", [0.0, 0.2])
    def test_eta_range(self, eta):
        with pytest.raises(ConfigError):
            geometry(0.2, eta=eta)


class TestModifiedProfile:
    def test_b_zero_is_ground_state(self, ground1, family):
        p = family(0.0)
        r = np.linspace(0, 10, 101)
        assert np.max(np.abs(p.evaluate(r)[0] - ground1(r))) < 1e-12

    @pytest.mark.parametrize("b", [0.1, 0.2, 0.3])
    def test_psi_vanishes_inside(self, family, b):
        assert interior_ratio(family(b)) < 1e-4

    def test_psi_sup_split_at_b02(self, family):
        p = family(0.2)
        inner = p.radial_grid <= p.geometry.R_b_minus
        assert np.max(np.abs(p.psi[inner])) < 1e-6
        assert np.max(np.abs(p.psi[~inner])) > 1e-3

    def test_annulus_psi_converges(self, ground1):
        a = solve_modified_profile(0.2, ground=ground1, step=2e-3, n_annulus=64)
        b = solve_modified_profile(0.2, ground=ground1, step=1e-3, n_annulus=128)
        assert abs(annulus_norm(a) / annulus_norm(b) - 1) < 0.01

    def test_differenced_psi_matches_product_formula(self, family):
        p = family(0.25)
        ref = psi_b_product_formula(p, p.radial_grid)
        assert np.max(np.abs(ref - p.psi)) < 1e-6 * np.max(np.abs(ref))

    def test_support_and_phase(self, family):
        p = family(0.3)
        f = p.evaluate(np.array([p.geometry.R_b + 0.1]))[0]
        assert f[0] == 0
        # Q_b e^{ib r²/4} is real inside the plateau
        r = np.linspace(0.1, p.geometry.R_b_minus * 0.9, 50)
        q = p.evaluate(r)[0] * np.exp(0.25j * p.b * r * r)
        assert np.max(np.abs(q.imag)) < 1e-12

    def test_peak_within_window_of_q0(self, ground1, family):
        for b in (0.1, 0.3, 0.5):
            assert abs(family(b).p0 - ground1.q0) < 0.05

    @pytest.mark.parametrize("b", [0.05, 0.1, 0.2])
    def test_supercritical_mass(self, ground1, family, b):
        assert family(b).mass() > ground1.mass()

    def test_mass_excess_quadratic(self, ground1, family):
        bs = np.array([0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
        ex = np.array([family(b).mass() - ground1.mass() for b in bs])
        slope = np.polyfit(np.log(bs), np.log(ex), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.1)

    def test_family_cache(self, family):
        assert family(0.2) is family(0.2)


class TestGamma:
    @settings(max_examples=30, deadline=None)
    @given(b=st.floats(0.01, 0.5), c=st.floats(0.01, 0.9))
    def test_sandwich(self, b, c):
        g = gamma_b(b, c)
        assert g.log_lower < g.log_proxy < g.log_upper

    def test_domain(self):
        with pytest.raises(ConfigError):
            gamma_b(0.0)

    def test_theta_weight(self):
        assert theta_weight(2.0) == pytest.approx(math.pi / 2)
        # linear continuation with the same value at r = 2
        assert theta_weight(4.0) == pytest.approx(math.pi)
        h = 1e-6
        slope = (theta_weight(1.0 + h) - theta_weight(1.0 - h)) / (2 * h)
        assert slope == pytest.approx(math.sqrt(1 - 0.25), rel=1e-6)


class TestRadiation:
    @pytest.mark.parametrize("b", [0.15, 0.25])
    def test_residual(self, family, b):
        rad = solve_radiation(b, family(b))
        assert rad.residual < 1e-6
        assert math.isfinite(rad.grad_energy)

    def test_zero_forcing(self, family):
        rad = solve_radiation(0.0, family(0.0))
        assert np.all(rad.zeta == 0)

    def test_cut_support(self, family):
        rad = solve_radiation(0.25, family(0.25))
        far = rad.radial_grid >= 2 * rad.A_b
        assert np.all(rad.zeta_cut[far] == 0)

    def test_wrong_profile(self, family):
        with pytest.raises(ConfigError):
            solve_radiation(0.2, family(0.25))


def test_family_default_step(ground1):
    fam = ProfileFamily(ground1)
    assert fam(0.2).b == 0.2
