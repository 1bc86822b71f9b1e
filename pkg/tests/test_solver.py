import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multiblowup.errors import ConfigError
from multiblowup.grid import Field, Grid
from multiblowup.groundstate import functionals
from multiblowup.modulation import BubbleParams, place_profile
from multiblowup.solver import (
    RescaledConfig,
    SolverConfig,
    StopPredicate,
    apply_symmetry,
    evolve,
    evolve_rescaled_frame,
    reference_solution,
    spectral_interpolate,
    stable_dt,
    step,
)


def rel_l2(a, b, grid):
    return math.sqrt(grid.integrate(np.abs(a - b) ** 2) / grid.integrate(np.abs(b) ** 2))


def run_to(field, t_end, dt):
    cfg = SolverConfig(dt_fixed=dt, stop=StopPredicate(t_end=t_end), keep_fields=False)
    return evolve(field, cfg)


@pytest.fixture(scope="module")
def grid1():
    return Grid.cube(1, 40.0, 1024)


class TestClosedFormOracles:
    def test_plane_wave_exact(self):
        grid = Grid.cube(1, 2 * math.pi, 64)
        params = {"amplitude": 0.7, "k": [3.0]}
        u0 = reference_solution("plane_wave", grid, 0.0, params)
        traj = run_to(u0, 1.0, 0.01)
        ref = reference_solution("plane_wave", grid, 1.0, params)
        assert np.max(np.abs(traj.final.values - ref.values)) < 1e-11

    @pytest.mark.parametrize("lam", [1.0, 0.7])
    def test_soliton(self, grid1, ground1, lam):
        p = {"lam": lam, "x0": [1.5], "theta": 0.3}
        u0 = reference_solution("soliton", grid1, 0.0, p, ground1)
        # the splitting error scales like dt²/λ⁸
        traj = run_to(u0, 1.0, 1e-3 * lam**4)
        ref = reference_solution("soliton", grid1, 1.0, p, ground1)
        assert rel_l2(traj.final.values, ref.values, grid1) < 2e-5

    def test_soliton_second_order(self, grid1, ground1):
        u0 = reference_solution("soliton", grid1, 0.0, {}, ground1)
        ref = reference_solution("soliton", grid1, 0.5, {}, ground1)
        errs = [rel_l2(run_to(u0, 0.5, dt).final.values, ref.values, grid1) for dt in (0.02, 0.01)]
        assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)

    def test_pseudoconformal_s(self, ground1):
        grid = Grid.cube(1, 80.0, 2048)
        u0 = reference_solution("pseudoconformal_S", grid, -1.0, ground=ground1)
        traj = run_to(u0, -0.5, 1e-4)
        ref = reference_solution("pseudoconformal_S", grid, -0.5, ground=ground1)
        assert rel_l2(traj.final.values, ref.values, grid) < 1e-5

    def test_s_requires_negative_time(self, grid1, ground1):
        with pytest.raises(ConfigError):
            reference_solution("pseudoconformal_S", grid1, 0.5, ground=ground1)

    def test_unknown_kind(self, grid1):
        with pytest.raises(ConfigError):
            reference_solution("kink", grid1, 0.0)


def gaussian(grid, amp=1.2, width=1.5, k=0.4):
    x = grid.mesh[0]
    return Field(grid, amp * np.exp(-x**2 / width**2 + 1j * k * x))


class TestConservation:
    def test_mass_energy_momentum(self, grid1):
        u0 = gaussian(grid1)
        traj = evolve(u0, SolverConfig(dt_safety=0.05, stop=StopPredicate(t_end=2.0), output_dt=0.5))
        obs = traj.observables
        assert np.ptp(obs["mass"]) / obs["mass"][0] < 1e-11
        assert np.ptp(obs["momentum_0"]) < 1e-10
        assert np.ptp(obs["energy"]) / abs(obs["energy"][0]) < 1e-4

    def test_energy_error_shrinks_with_dt(self, grid1):
        u0 = gaussian(grid1)
        drifts = []
        for dt in (4e-3, 2e-3):
            f = run_to(u0, 1.0, dt).final
            drifts.append(abs(functionals(f).energy - functionals(u0).energy))
        assert drifts[1] < drifts[0] / 3


class TestSymmetries:
    def test_galilean_commutes(self, grid1, ground1):
        u0 = reference_solution("soliton", grid1, 0.0, {}, ground1)
        beta = {"beta": [0.8]}
        t = 0.5
        a = run_to(apply_symmetry(u0, "galilean", beta), t, 1e-3).final
        b = apply_symmetry(run_to(u0, t, 1e-3).final, "galilean", beta)
        assert rel_l2(a.values, b.values, grid1) < 1e-6

    def test_phase_commutes(self, grid1):
        u0 = gaussian(grid1)
        a = run_to(apply_symmetry(u0, "phase", {"theta": 1.1}), 0.3, 1e-3).final
        b = apply_symmetry(run_to(u0, 0.3, 1e-3).final, "phase", {"theta": 1.1})
        assert np.max(np.abs(a.values - b.values)) < 1e-12

    def test_scaling_maps_soliton(self, grid1, ground1):
        u = reference_solution("soliton", grid1, 0.0, {}, ground1)
        v = apply_symmetry(u, "scaling", {"lam": 0.8})
        ref = reference_solution("soliton", grid1, 0.0, {"lam": 1 / 0.8}, ground1)
        assert rel_l2(v.values, ref.values, grid1) < 1e-8

    def test_pseudoconformal_involution(self, grid1):
        u = gaussian(grid1, width=1.0).with_values(gaussian(grid1, width=1.0).values, time=0.8)
        back = apply_symmetry(apply_symmetry(u, "pseudoconformal"), "pseudoconformal")
        assert back.time == pytest.approx(0.8)
        assert rel_l2(back.values, u.values, grid1) < 1e-10

    def test_pseudoconformal_maps_soliton_to_s(self, ground1):
        grid = Grid.cube(1, 80.0, 2048)
        sol = reference_solution("soliton", grid, -1.0, {}, ground1)
        mapped = apply_symmetry(sol, "pseudoconformal")
        ref = reference_solution("pseudoconformal_S", grid, -1.0, ground=ground1)
        assert mapped.time == -1.0
        assert rel_l2(mapped.values, ref.values, grid) < 1e-8

    @settings(max_examples=20, deadline=None)
    @given(x0=st.floats(-5, 5))
    def test_translation_roundtrip(self, x0):
        grid = Grid.cube(1, 40.0, 256)
        u = gaussian(grid)
        back = apply_symmetry(apply_symmetry(u, "translate", {"x0": [x0]}), "translate", {"x0": [-x0]})
        assert np.max(np.abs(back.values - u.values)) < 1e-12

    def test_spectral_interpolate_exact_on_nodes(self, grid1):
        u = gaussian(grid1).values
        assert np.allclose(spectral_interpolate(u, grid1, [grid1.axes[0]]), u, atol=1e-12)

    def test_unknown_symmetry(self, grid1):
        with pytest.raises(ConfigError):
            apply_symmetry(gaussian(grid1), "boost")


class TestStepping:
    def test_stable_dt_rule(self, grid1):
        u = np.full(grid1.shape, 2.0 + 0j)
        cfg = SolverConfig(dt_safety=0.5, linear_weight=1e6)
        assert stable_dt(u, grid1, cfg) == pytest.approx(0.5 * 2.0**-4)
        cfg = SolverConfig(dt_safety=0.5)
        assert stable_dt(u, grid1, cfg) == pytest.approx(0.5 * grid1.dx[0] ** 2)

    def test_single_step_matches_evolve(self, grid1):
        u0 = gaussian(grid1)
        one = step(u0, 1e-3)
        traj = run_to(u0, 1e-3, 1e-3)
        assert np.max(np.abs(one.values - traj.final.values)) < 1e-13

    @pytest.mark.parametrize("stop, reason", [
        (StopPredicate(t_end=0.25), "t_end"),
        (StopPredicate(max_steps=7), "max_steps"),
        (StopPredicate(wall_clock=0.0), "wall_clock"),
    ])
    def test_stop_reasons(self, grid1, stop, reason):
        traj = evolve(gaussian(grid1), SolverConfig(dt_safety=0.1, stop=stop))
        assert traj.stop_reason == reason

    def test_lands_on_t_end(self, grid1):
        traj = run_to(gaussian(grid1), 0.2501, 0.01)
        assert traj.final.time == pytest.approx(0.2501, abs=1e-14)

    def test_grad_growth_on_collapse(self, ground1):
        grid = Grid.cube(1, 20.0, 2048)
        u0 = Field(grid, 1.5 * ground1(grid.radius()).astype(complex))
        stop = StopPredicate(grad_growth=4.0, t_end=5.0)
        cfg = SolverConfig(dt_safety=0.05, linear_weight=1e6, stop=stop, output_dt=0.005)
        traj = evolve(u0, cfg)
        assert traj.stop_reason == "grad_growth"
        assert traj.observables["grad_norm"][-1] >= 4 * traj.observables["grad_norm"][0]
        assert traj.observables["grad_norm"][-2] < 4 * traj.observables["grad_norm"][0]

    def test_observer_stop(self, grid1):
        traj = evolve(gaussian(grid1), SolverConfig(dt_safety=0.1, output_dt=0.01),
                      observer=lambda f, row: "seen" if f.time > 0.05 else None)
        assert traj.stop_reason == "seen"

    def test_bad_safety(self):
        with pytest.raises(ConfigError):
            SolverConfig(dt_safety=0.0)


class TestRescaledFrame:
    def test_profile_stays_centred(self, family):
        grid = Grid.cube(1, 60.0, 1024)
        b = 0.3
        v0 = Field(grid, place_profile(grid, family(b), BubbleParams(b, 1.0, (0.0,), 0.0)))
        cfg = RescaledConfig(ds=2e-3, output_ds=0.1, s_max=1.0)
        traj = evolve_rescaled_frame(v0, family, b, 0.0, cfg)
        tr = traj.trace
        assert traj.stop_reason == "s_max"
        assert np.all(np.abs(tr["mu"] - 1) < 1e-2)
        assert np.all(np.abs(tr["b"] - b) < 0.02)
        # λ_s/λ = −b to leading order
        slope = np.polyfit(tr["s_rel"], tr["log_lambda_rel"], 1)[0]
        assert slope == pytest.approx(-b, rel=0.1)
        assert np.ptp(tr["mass"]) / tr["mass"][0] < 1e-3
