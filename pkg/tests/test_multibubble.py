import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multiblowup.errors import ConfigError, ResolutionError
from multiblowup.grid import Field, Grid
from multiblowup.modulation import BubbleParams, _pairings, decompose, local_observables
from multiblowup.multibubble import (
    BubbleTrace,
    MultiBubbleSpec,
    Thresholds,
    Tracker,
    build_initial_data,
    extract_local,
    project_orthogonal,
    report_json,
    run_multibubble,
    track,
)
from multiblowup.solver import SolverConfig, StopPredicate


def two_bubbles(**kw):
    bubbles = [BubbleParams(0.3, 0.08, (-8.0,), 0.0), BubbleParams(0.25, 0.06, (8.0,), 0.5)]
    base = dict(box_length=40.0, n_points=2**14)
    base.update(kw)
    return MultiBubbleSpec(bubbles, **base)


@pytest.fixture(scope="module")
def pair(family):
    spec = two_bubbles(epsilon_seed={"kind": "gaussian", "amplitude": 1e-3, "width": 0.3,
                                     "center": [-8.05]})
    field, report = build_initial_data(spec, family)
    return spec, field, report


class TestSpec:
    def test_json_roundtrip(self):
        spec = two_bubbles(energy_correction=True, epsilon_seed={"kind": "noise", "seed": 3})
        back = MultiBubbleSpec.from_json(spec.to_json())
        assert back.to_json() == spec.to_json()
        assert back.bubbles == spec.bubbles

    def test_unknown_keys(self):
        doc = {"bubbles": [{"b": 0.2, "lambda": 0.1, "x": [0.0]}], "colour": 1}
        with pytest.raises(ConfigError):
            MultiBubbleSpec.from_dict(doc)
        with pytest.raises(ConfigError):
            MultiBubbleSpec.from_dict({"bubbles": [{"b": 0.2, "lambda": 0.1, "x": [0], "mu": 1}]})

    @pytest.mark.parametrize("bubbles", [
        [],
        [BubbleParams(0.2, 0.1, (0.0,), 0.0), BubbleParams(0.2, 0.1, (5.0,), 0.0)],
        [BubbleParams(0.0, 0.1, (0.0,), 0.0)],
        [BubbleParams(0.6, 0.1, (0.0,), 0.0)],
        [BubbleParams(0.2, 0.1, (0.0,), 0.0), BubbleParams(0.2, 0.1, (20.0, 0.0), 0.0)],
    ])
    def test_rejected(self, bubbles):
        with pytest.raises(ConfigError):
            MultiBubbleSpec(bubbles)

    @pytest.mark.parametrize("kw", [{"n1": 4.0}, {"k1": 2.0}])
    def test_threshold_orders(self, kw):
        with pytest.raises(ConfigError):
            Thresholds(**kw)


class TestConstruction:
    def test_parameters_recovered(self, pair, family):
        spec, field, _ = pair
        for bp in spec.bubbles:
            w = (field.grid.radius(bp.x_center) < 1).astype(float)
            q, _ = decompose(field, bp, family, window=w)
            assert np.allclose(q.vector(), bp.vector(), atol=1e-6)

    def test_seed_is_orthogonal(self, pair, family):
        spec, field, report = pair
        orth = [ln for ln in report if ln.name == "orthogonality"]
        assert len(orth) == 2 and all(ln.pass_relaxed for ln in orth)

    def test_report_lines(self, pair):
        _, _, report = pair
        names = {ln.name for ln in report}
        assert {"sign_b", "b_below_alpha", "loglog_window_upper", "loglog_window_lower",
                "local_error", "tame_energy", "tame_momentum", "smallness",
                "exterior_smoothness", "separation"} <= names
        doc = report_json(report)
        assert '"pass_exact"' in doc and '"relaxed_threshold_log"' in doc

    def test_energy_correction_tames(self, family):
        spec = two_bubbles(energy_correction=True)
        field, report = build_initial_data(spec, family)
        for bp in spec.bubbles:
            e = local_observables(field, bp.x_center).energy
            assert abs(e) * bp.lam**2 < 1e-10
        tame = [ln for ln in report if ln.name == "tame_energy"]
        assert all(ln.pass_relaxed for ln in tame)

    def test_uncorrected_energy_is_not_tame(self, family):
        field, report = build_initial_data(two_bubbles(), family)
        tame = [ln for ln in report if ln.name == "tame_energy"]
        assert not any(ln.pass_relaxed for ln in tame)

    def test_resolution_guard(self, family):
        with pytest.raises(ResolutionError):
            build_initial_data(two_bubbles(n_points=2**10), family, validate=False)

    def test_support_guard(self, family):
        spec = MultiBubbleSpec([BubbleParams(0.3, 0.5, (0.0,), 0.0)], box_length=40.0, n_points=2**12)
        with pytest.raises(ConfigError):
            build_initial_data(spec, family, validate=False)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_projection_kills_pairings(self, seed):
        grid = Grid.cube(1, 4.0, 1024)
        fam = _FAMILY[0]
        p = BubbleParams(0.3, 0.1, (0.2,), 0.4)
        rng = np.random.default_rng(seed)
        eps = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * 1e-3
        out = project_orthogonal(eps, grid, fam(p.b), p)
        ref = np.max(np.abs(_pairings(eps, grid, p, fam(p.b))))
        assert np.max(np.abs(_pairings(out, grid, p, fam(p.b)))) < 1e-10 * max(ref, 1e-12)


_FAMILY: list = []


@pytest.fixture(autouse=True, scope="module")
def _share_family(family):
    _FAMILY[:] = [family]


class TestLocalBox:
    def test_power_of_two_and_centred(self):
        grid = Grid.cube(1, 40.0, 4096)
        x = grid.axes[0]
        f = Field(grid, np.exp(-((x - 7.3) / 0.1) ** 2).astype(complex))
        loc, off = extract_local(f, (7.3,), 1.0)
        n = loc.grid.n_points[0]
        assert n & (n - 1) == 0 and n * grid.dx[0] >= 2.0
        assert loc.grid.dx == grid.dx
        assert abs(off[0] - 7.3) <= grid.dx[0] / 2
        assert loc.grid.axes[0][np.argmax(np.abs(loc.values))] == pytest.approx(
            x[np.argmax(np.abs(f.values))] - off[0])

    def test_wraps_periodically(self):
        grid = Grid.cube(1, 10.0, 256)
        f = Field(grid, np.arange(256).astype(complex))
        loc, off = extract_local(f, (-5.0,), 0.5)
        assert loc.values[0].real > loc.values[-1].real  # indices wrap past the edge


class TestTraces:
    def test_csv_roundtrip(self, tmp_path):
        n = 5
        rng = np.random.default_rng(1)
        tr = BubbleTrace(
            t=np.linspace(0, 1, n), s=np.arange(n) + 10.0, b=rng.random(n), log_lam=-rng.random(n),
            x=rng.random((n, 2)), gamma=rng.random(n), grad_sq=rng.random(n),
            exp_weighted=rng.random(n), eps_l2_sq=rng.random(n), e_loc=rng.random(n),
            p_loc=rng.random((n, 2)), local_mass=rng.random(n), orth_residual=rng.random(n),
        )
        tr.to_csv(tmp_path / "b.csv")
        back = BubbleTrace.from_csv(tmp_path / "b.csv")
        for k in ("t", "s", "b", "log_lam", "x", "gamma", "p_loc", "local_mass"):
            assert np.array_equal(getattr(back, k), getattr(tr, k))
        assert len(back.truncate(3)) == 3

    def test_track_static_data(self, pair, family):
        spec, field, _ = pair
        traces = track([field, field.with_values(field.values, time=1e-3)], spec, family)
        for tr, bp in zip(traces, spec.bubbles):
            assert len(tr) == 2
            assert np.allclose(tr.lam, bp.lam, rtol=1e-6)
            assert tr.s[0] == pytest.approx(math.exp(3 * math.pi / (4 * bp.b)))

    def test_collision_stop(self, pair, family):
        spec, field, _ = pair
        tracker = Tracker(spec, family, collision_distance=20.0)
        assert tracker(field) == "collision"

    def test_lambda_floor_flags_first(self, pair, family):
        spec, field, _ = pair
        tracker = Tracker(spec, family, lambda_stop=0.07)
        assert tracker(field) == "lambda_floor"
        flags = [tr.flags["first_floor"] for tr in tracker.traces()]
        assert flags == [False, True]

    def test_short_run(self, family):
        spec = two_bubbles(energy_correction=True)
        cfg = SolverConfig(dt_safety=0.05, linear_weight=1e12, output_dt=2e-4,
                           stop=StopPredicate(t_end=1e-3), keep_fields=False)
        run = run_multibubble(spec, family, cfg)
        assert run.stop_reason == "t_end"
        for tr in run.traces:
            assert np.all(np.diff(tr.log_lam) < 0)  # both bubbles focus
            assert np.ptp(tr.local_mass) / tr.local_mass[0] < 1e-6
