import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multiblowup.errors import ConfigError, ConvergenceError, ResolutionError
from multiblowup.grid import Field, Grid
from multiblowup.modulation import (
    BubbleParams,
    chi0_loc,
    chi1_loc,
    decompose,
    initial_guess,
    local_observables,
    localize_bubble,
    log_s0,
    orthogonality_residuals,
    place_profile,
    rescaled_time,
    weighted_error_norm,
)
from multiblowup.profiles import ProfileFamily
from multiblowup.solver import reference_solution


@pytest.fixture(scope="module")
def grid1():
    return Grid.cube(1, 20.0, 2048)


def bubble(grid, family, params):
    return Field(grid, place_profile(grid, family(params.b), params))


class TestParams:
    def test_vector_roundtrip(self):
        p = BubbleParams(0.2, 0.5, (1.0, -2.0), 0.3, s=4.0)
        q = BubbleParams.from_vector(p.vector(), s=4.0)
        assert q == p
        assert q.dimension == 2

    def test_positive_lambda(self):
        with pytest.raises(ConfigError):
            BubbleParams(0.2, 0.0, (0.0,), 0.0)

    # b = 1 keeps the window -e^{2π} < ln λ < -e^{π/2} representable
    @pytest.mark.parametrize("b, ln_lam, inside", [
        (1.0, -5.0, True),
        (1.0, -4.0, False),
        (1.0, -540.0, False),
        (-0.1, -100.0, False),
    ])
    def test_regime(self, b, ln_lam, inside):
        assert BubbleParams(b, math.exp(ln_lam), (0.0,), 0.0).in_regime() is inside


class TestDecompose:
    def test_recovers_exact_parameters(self, grid1, family):
        p = BubbleParams(0.2, 0.4, (0.7,), 0.9)
        u = bubble(grid1, family, p)
        guess = BubbleParams(0.15, 0.45, (0.6,), 0.7)
        q, eps = decompose(u, guess, family)
        assert np.allclose(q.vector(), p.vector(), atol=1e-7)
        assert np.max(np.abs(eps.values_x)) < 1e-6 * np.max(np.abs(u.values))

    @settings(max_examples=10, deadline=None)
    @given(b=st.floats(0.05, 0.4), lam=st.floats(0.3, 0.8), x=st.floats(-2, 2),
           gamma=st.floats(-1, 1))
    def test_fixed_point(self, b, lam, x, gamma):
        grid = Grid.cube(1, 20.0, 2048)
        fam = _FAMILY[0]
        p = BubbleParams(b, lam, (x,), gamma)
        u = bubble(grid, fam, p)
        q, eps = decompose(u, p, fam)
        assert np.allclose(q.vector(), p.vector(), atol=1e-9)

    def test_residuals_vanish_after_fit(self, grid1, family):
        p = BubbleParams(0.2, 0.4, (0.0,), 0.0)
        x = grid1.axes[0]
        noise = 1e-3 * np.exp(-(x - 0.3) ** 2) * (1 + 0.5j)
        u = Field(grid1, bubble(grid1, family, p).values + noise)
        q, eps, info = decompose(u, p, family, return_info=True)
        res = orthogonality_residuals(eps, family(q.b))
        norm = math.sqrt(grid1.integrate(np.abs(u.values) ** 2))
        assert np.max(np.abs(res)) <= 1e-10 * norm
        assert info.residual <= 1e-10 * norm

    def test_two_dimensional(self, ground2):
        grid = Grid.cube(2, 16.0, 128)
        fam = ProfileFamily(ground2, eta=0.01)
        p = BubbleParams(0.3, 0.8, (0.4, -0.3), 0.2)
        u = bubble(grid, fam, p)
        q, _ = decompose(u, BubbleParams(0.28, 0.82, (0.35, -0.25), 0.15), fam)
        assert np.allclose(q.vector(), p.vector(), atol=1e-6)

    def test_zero_field(self, grid1, family):
        with pytest.raises(ConvergenceError):
            decompose(Field(grid1, np.zeros(grid1.shape, complex)), BubbleParams(0.1, 1, (0,), 0), family)

    def test_no_convergence(self, grid1, family):
        u = bubble(grid1, family, BubbleParams(0.2, 0.4, (0.0,), 0.0))
        with pytest.raises(ConvergenceError):
            decompose(u, BubbleParams(0.1, 0.5, (0.2,), 0.3), family, max_iter=1)

    def test_initial_guess_in_basin(self, grid1, family, ground1):
        p = BubbleParams(0.2, 0.5, (1.3,), 0.4)
        u = bubble(grid1, family, p)
        g = initial_guess(u, family(0.2).p0, b=0.2)
        # the sampled peak is off-node by at most dx/2
        assert g.lam == pytest.approx(0.5, rel=1e-4)
        assert g.x_center[0] == pytest.approx(1.3, abs=grid1.dx[0])
        assert g.gamma == pytest.approx(0.4)
        q, _ = decompose(u, g, family)
        assert np.allclose(q.vector(), p.vector(), atol=1e-8)


_FAMILY: list = []


@pytest.fixture(autouse=True, scope="module")
def _share_family(family):
    _FAMILY[:] = [family]


class TestLocalisation:
    def test_tiny_b_refused(self, family):
        with pytest.raises(ResolutionError):
            family(1e-8)

    def test_cutoffs(self):
        r = np.array([0.0, 0.6, 0.7, 0.8, 1.2])
        assert list(chi1_loc(r)) == [1.0, 1.0, pytest.approx(chi1_loc(0.7)), 0.0, 0.0]
        assert list(chi0_loc(r)[[0, 1, 4]]) == [1.0, 1.0, 0.0]

    def test_overlap_refused(self, grid1):
        u = Field(grid1, np.ones(grid1.shape, complex))
        with pytest.raises(ConfigError):
            localize_bubble(u, (0.0,), others=[(1.0,)], scale=1.0)

    def test_localised_error_is_exact_inside(self, grid1, family):
        p = BubbleParams(0.2, 0.1, (-3.0,), 0.0)
        u = bubble(grid1, family, p)
        w, eps = localize_bubble(u, (-3.0,), others=[(3.0,)], profiles=family, params=p, scale=2.0)
        assert np.max(np.abs(eps.values_x)) < 1e-12

    def test_local_soliton_observables(self, grid1, ground1):
        u = reference_solution("soliton", grid1, 0.0, {"lam": 0.2, "x0": [2.0]}, ground1)
        obs = local_observables(u, (2.0,), scale=4.0)
        assert obs.mass == pytest.approx(ground1.mass(), rel=1e-8)
        assert abs(obs.energy) < 1e-6
        assert abs(obs.momentum[0]) < 1e-10


class TestTimeAndNorms:
    def test_log_s0(self):
        assert log_s0(0.25) == pytest.approx(3 * math.pi)

    def test_rescaled_time_constant_scale(self):
        t = np.linspace(0, 1, 11)
        s = rescaled_time(t, np.full(11, 0.5), 0.5)
        assert np.allclose(s - s[0], 4 * t)
        assert s[0] == pytest.approx(math.exp(1.5 * math.pi))

    def test_rescaled_time_overflow(self):
        s = rescaled_time([0.0, 1.0], [1.0, 1.0], 1e-3)
        assert np.all(np.isinf(s))

    def test_rescaled_time_positive(self):
        with pytest.raises(ConfigError):
            rescaled_time([0, 1], [1, 0], 0.2)

    def test_weighted_norm_scaling(self, grid1, family):
        p = BubbleParams(0.2, 0.5, (0.0,), 0.0)
        u = bubble(grid1, family, p)
        _, eps = decompose(u, p, family)
        bumped = type(eps)(grid1, eps.values_x + 1e-3 * np.exp(-grid1.axes[0] ** 2), p)
        wn = weighted_error_norm(bumped)
        assert wn["sum"] == pytest.approx(wn["grad_sq"] + wn["exp_weighted"])
        assert wn["exp_weighted"] < wn["l2_sq"]
        assert math.isfinite(wn["log_sum"])
