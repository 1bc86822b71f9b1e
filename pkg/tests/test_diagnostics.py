import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from multiblowup.diagnostics import (
    Check,
    CheckReport,
    ExteriorMonitor,
    _f1_integral,
    _running_ratio,
    analysis_exponents,
    bootstrap_report,
    dn_multiplier,
    dn_sandwich,
    exterior_regularity,
    exterior_window,
    f1_tilde,
    fit_blowup_time,
    gain_bound,
    lwp_partition,
    lyapunov_functional,
    radiation_gamma,
    scale_integrals,
    variance_identity,
    virial_lyapunov_monitor,
)
from multiblowup.errors import ConfigError, ConvergenceError
from multiblowup.grid import Field, Grid
from multiblowup.multibubble import BubbleTrace
from multiblowup.profiles import solve_radiation
from multiblowup.solver import SolverConfig, StopPredicate, evolve


def loglog_trace(T=1.0, n=60, c=2 * math.pi):
    """Exact samples of ``λ² ln|lnλ| = c (T − t)``."""
    t = T - np.geomspace(1e-4, 1e-9, n)
    ll = []
    for ti in t:
        y = c * (T - ti)
        # the map is monotone for ln λ below about −1.4
        ll.append(brentq(lambda x: math.exp(2 * x) * math.log(-x) - y, -200, -1.5, xtol=1e-300, rtol=1e-15))
    return t, np.array(ll)


def make_trace(t, ll, b=None, x=None):
    n = len(t)
    b = np.full(n, 0.2) if b is None else b
    x = np.zeros((n, 1)) if x is None else x
    z = np.full(n, 1e-30)
    return BubbleTrace(t=t, s=np.exp(3 * math.pi / 0.8) + np.arange(n) * 1.0, b=b, log_lam=ll, x=x,
                       gamma=np.zeros(n), grad_sq=z, exp_weighted=z, eps_l2_sq=z, e_loc=np.zeros(n),
                       p_loc=np.zeros((n, 1)), local_mass=np.ones(n), orth_residual=z)


class TestChecks:
    def test_le_ge(self):
        assert Check.le("a", "r", 1.0, 2.0).margin == 1.0
        assert not Check.le("a", "r", 2.0, 2.0, strict=True).passed
        assert Check.ge("a", "r", 3.0, 2.0).passed

    def test_report_json_handles_inf(self):
        rep = CheckReport([Check.le("a", "r", -math.inf, 0.0)], {"v": np.array([np.nan])})
        doc = rep.to_json()
        assert '"-inf"' in doc and '"nan"' in doc and rep.passed


class TestBlowupFit:
    def test_exact_law(self):
        t, ll = loglog_trace(T=0.7)
        fit = fit_blowup_time(t, ll)
        assert fit.T_pred == pytest.approx(0.7, rel=1e-9)
        assert fit.slope_over_2pi == pytest.approx(1.0, rel=1e-9)
        assert fit.constant and fit.r_squared > 1 - 1e-12

    def test_time_unit(self):
        t, ll = loglog_trace(T=1.0, c=2 * math.pi)
        # λ measured in units e^{u/2}, t in e^{u}: the slope ratio is unchanged
        u = -2.0
        fit = fit_blowup_time(t / math.exp(u), ll, time_unit_log=u)
        assert fit.slope_over_2pi == pytest.approx(1.0, rel=1e-9)

    def test_other_rate(self):
        t, ll = loglog_trace(c=math.pi)
        assert fit_blowup_time(t, ll).slope_over_2pi == pytest.approx(0.5, rel=1e-9)

    def test_insufficient_focusing(self):
        t = np.linspace(0, 1, 10)
        with pytest.raises(ConvergenceError):
            fit_blowup_time(t, np.full(10, -2.0))

    def test_too_short(self):
        with pytest.raises(ConvergenceError):
            fit_blowup_time([0, 1], [-1, -5])


class TestBootstrap:
    def test_running_ratio(self):
        assert _running_ratio(np.array([1.0, 0.5, 1.4, 0.2])) == pytest.approx(2.8)
        assert _running_ratio(np.array([1.0, 0.5, 0.25])) == 0.5

    def test_scale_integrals_constant(self):
        t = np.linspace(0, 2, 5)
        si = scale_integrals(t, np.full(5, math.log(0.25)))
        assert si["log_int_lambda_m1_5"] == pytest.approx(math.log(2 * 0.25**-1.5))

    @pytest.mark.parametrize("u", [-4.0, 3.0])
    def test_scale_integrals_unit_invariant(self, u):
        t = np.linspace(0, 1, 7)
        ll = -1.0 - t
        a = scale_integrals(t, ll)
        b = scale_integrals(t / math.exp(u), ll, time_unit_log=u)
        for k in a:
            assert b[k] == pytest.approx(a[k], abs=1e-12)

    def test_monotone_flag(self):
        t, ll = loglog_trace(n=20)
        ll = ll.copy()
        ll[10] = ll[9] + math.log(3.5)
        rep = bootstrap_report([make_trace(t, ll)])
        assert not rep.by_name("almost_monotone")[0].passed
        assert rep.by_name("b_positive")[0].passed

    def test_translation_and_exterior(self):
        t, ll = loglog_trace(n=20)
        x = np.zeros((20, 1))
        x[-1, 0] = 2e-3
        rep = bootstrap_report([make_trace(t, ll, x=x)], exterior={"norm": np.array([1.0, 2.0])},
                               lambda0=[0.1])
        assert not rep.by_name("translation")[0].passed
        assert rep.by_name("exterior_h_n1")[0].passed


class TestVirial:
    def test_loglog_b_has_no_violations(self):
        s = np.linspace(1e3, 2e3, 400)
        tr = make_trace(np.zeros(400), np.full(400, -5.0), b=math.pi / np.log(s))
        tr.s = s
        out = virial_lyapunov_monitor(tr)
        assert out.violations == 0 and out.report.passed
        exact = -math.pi / (s * np.log(s) ** 2)
        ok = np.isfinite(out.b_s)
        assert np.allclose(out.b_s[ok], exact[ok], rtol=1e-4)

    def test_steep_drop_violates(self):
        s = np.linspace(0, 10, 200)
        b = 0.2 - 0.01 * s
        tr = make_trace(np.zeros(200), np.full(200, -5.0), b=b)
        tr.s = s + 1.0
        out = virial_lyapunov_monitor(tr)
        assert out.violations > 0

    def test_noise_guard(self):
        rng = np.random.default_rng(0)
        n = 200
        tr = make_trace(np.zeros(n), np.full(n, -5.0), b=0.2 + 1e-9 * np.arange(n) + 1e-3 * rng.standard_normal(n))
        tr.s = np.arange(n) * 1.0 + 1.0
        with pytest.raises(ConvergenceError):
            virial_lyapunov_monitor(tr)


class TestLyapunov:
    def test_terms_without_error(self, family):
        out = lyapunov_functional(None, 0.2, family)
        assert out["truncated"]
        assert out["J"] == pytest.approx(out["mass_excess"] - 0.1 / 800 * (0.2 * out["f1"] - out["f1_integral"]))
        assert out["mass_excess"] > 0

    def test_f1_integral_derivative(self, family):
        h = 1e-3
        d = (_f1_integral(0.2 + h, family, None) - _f1_integral(0.2 - h, family, None)) / (2 * h)
        assert d == pytest.approx(f1_tilde(0.2, family), rel=1e-4)

    def test_radiation_gamma(self, family):
        rad = solve_radiation(0.25, family(0.25))
        g = radiation_gamma(rad)
        assert g > 0 and math.isfinite(g)


class TestExterior:
    def test_window(self):
        grid = Grid.cube(1, 10.0, 1024)
        w = exterior_window(grid, [(-2.0,), (2.0,)], 0.5, 1.0)
        x = grid.axes[0]
        assert np.all(w[np.abs(np.abs(x) - 2) < 0.5] == 0)
        assert np.all(w[np.abs(np.abs(x) - 2) > 1.0] == 1)

    def test_static_flux(self):
        grid = Grid.cube(1, 10.0, 256)
        f = Field(grid, np.exp(-grid.axes[0] ** 2).astype(complex))
        fields = [f.with_values(f.values, time=t) for t in (0.0, 0.5, 1.0)]
        ser = exterior_regularity(fields, [(3.0,)], a0=0.5, d0=1.0)
        assert ser["growth"] == pytest.approx(1.0)
        assert ser["flux"][-1] == pytest.approx(ser["grad_sq"][0])

    def test_geometry_scale(self):
        grid = Grid.cube(1, 10.0, 256)
        mon = ExteriorMonitor(grid, [(0.0,)], a0=0.5, d0=1.0, geometry_scale=2.0)
        assert mon.window[np.argmin(np.abs(grid.axes[0] - 0.9))] == 0


class TestLWP:
    def test_dyadic_times(self):
        t = np.linspace(0, 10, 101)
        part = lwp_partition(t, -t * math.log(2))
        assert np.allclose(part.t_k, part.k)
        assert np.allclose(part.gaps, 1.0)
        assert part.total_pieces == int(part.pieces.sum())

    def test_requires_decrease(self):
        with pytest.raises(ConfigError):
            lwp_partition([0, 1, 2], [-1, -1, -2])


class TestDN:
    def test_multiplier(self):
        xi = np.array([0.0, 0.5, 1.0, 2.0, 3.0])
        m = dn_multiplier(xi, 4.0)
        assert list(m[:3]) == [1.0, 1.0, 1.0]
        assert m[3:] == pytest.approx([16.0, 81.0])
        fine = np.linspace(0, 4, 4001)
        assert np.all(np.diff(dn_multiplier(fine, 4.0)) >= 0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), N=st.floats(1.0, 20.0), K2=st.floats(2.0, 6.0))
    def test_sandwich(self, seed, N, K2):
        grid = Grid.cube(1, 2 * math.pi, 128)
        rng = np.random.default_rng(seed)
        f = Field(grid, rng.standard_normal(128) + 1j * rng.standard_normal(128))
        out = dn_sandwich(f, N, K2)
        assert out["ratio_upper"] <= 1 + 1e-12
        assert out["ratio_lower"] <= 5 ** (K2 / 2) * (1 + 1e-12)

    def test_band_limited_identity(self):
        grid = Grid.cube(1, 2 * math.pi, 64)
        f = Field(grid, np.exp(3j * grid.axes[0]))
        out = dn_sandwich(f, 4.0, 4.0)
        assert out["dn_norm"] == pytest.approx(math.sqrt(2 * math.pi))


class TestExponents:
    @pytest.mark.parametrize("q", [2.5, 4.0, 10.0])
    def test_admissible(self, q):
        ex = analysis_exponents(q, 4.0, 1.0)
        assert ex["tech1"]["admissible"] == pytest.approx(1.0)

    def test_gain_fixed_point(self):
        ex = analysis_exponents(3.0, 4.0, 0.5)
        assert ex["gain"]["fixed_point_residual"] == pytest.approx(0.0, abs=1e-15)
        assert ex["gain"]["limit"] == pytest.approx(2.0, abs=1e-9)
        assert gain_bound(1.0, 4.0) > 1.0

    @pytest.mark.parametrize("args", [(2.0, 4.0, 1.0), (3.0, 4.0, 5.0), (3.0, 4.0, 1.0, 1.0)])
    def test_domain(self, args):
        with pytest.raises(ConfigError):
            analysis_exponents(*args)


class TestVariance:
    def test_free_gaussian_second_difference(self):
        grid = Grid.cube(1, 60.0, 2048)
        x = grid.axes[0]
        u0 = Field(grid, (0.8 * np.exp(-x**2 / 2) * np.exp(0.3j * x)).astype(complex))
        cfg = SolverConfig(dt_fixed=1e-3, output_dt=0.05, stop=StopPredicate(t_end=0.5))
        traj = evolve(u0, cfg)
        out = variance_identity(traj.checkpoints)
        assert np.all(out["valid"])
        assert np.max(out["rel_error"]) < 1e-3

    def test_needs_even_spacing(self):
        grid = Grid.cube(1, 10.0, 64)
        f = Field(grid, np.ones(64, complex))
        fields = [f.with_values(f.values, time=t) for t in (0.0, 0.1, 0.3)]
        with pytest.raises(ConfigError):
            variance_identity(fields)
