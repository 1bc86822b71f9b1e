"""Batch entry point: ``run <mode> --config <path> [--out <dir>] [--seed <n>]`` and ``report <dir>``.

Every run writes its artifacts plus ``manifest.json``, which records the
config, its hash, package and library versions, the seed, and a SHA-256
digest of every output file.  ``report`` refuses directories holding files
that the manifest does not reference.

Exit codes: 0 success, 1 execution error, 2 a monitored inequality failed,
64 config schema violation, 75 resource limit.

Environment: ``MULTIBLOWUP_OUT`` overrides the output directory and
``MULTIBLOWUP_THREADS`` the number of balance workers.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import struct
import sys
from dataclasses import fields as dc_fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, MultiBlowupError
from .grid import Field, Grid
from .kernels import BACKEND

__all__ = [
    "EXIT_OK",
    "EXIT_ERROR",
    "EXIT_REPORT",
    "EXIT_SCHEMA",
    "EXIT_RESOURCE",
    "MODES",
    "ResourceLimit",
    "write_checkpoint",
    "read_checkpoint",
    "validate_config",
    "run",
    "report",
    "main",
]

EXIT_OK, EXIT_ERROR, EXIT_REPORT, EXIT_SCHEMA, EXIT_RESOURCE = 0, 1, 2, 64, 75
MODES = ("ground", "profile", "evolve", "rescaled", "decompose", "multibubble", "diagnose", "balance")

CHECKPOINT_MAGIC = b"MBLWCHK\x00"
CHECKPOINT_VERSION = 1
MANIFEST = "manifest.json"


class ResourceLimit(MultiBlowupError):
    """A wall-clock or memory limit was hit."""


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
def write_checkpoint(path, field: Field, config_hash: str = "") -> None:
    """Write ``field`` as magic, version, header length, JSON header, ``<c16`` samples.

    The header holds ``dimension``, ``box_length``, ``n_points``, ``time``,
    ``config_hash`` and ``dtype``.
    """
    g = field.grid
    header = json.dumps({
        "dimension": g.dimension,
        "box_length": list(g.box_length),
        "n_points": list(g.n_points),
        "time": float(field.time),
        "config_hash": config_hash,
        "dtype": "<c16",
    }, sort_keys=True).encode()
    data = np.ascontiguousarray(field.values, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(data)


def read_checkpoint(path) -> tuple[Field, dict]:
    """Inverse of :func:`write_checkpoint`; returns the field and its header."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen])
    grid = Grid(int(header["dimension"]), tuple(float(v) for v in header["box_length"]),
                tuple(int(n) for n in header["n_points"]))
    body = raw[16 + hlen:]
    if len(body) != 16 * int(np.prod(grid.shape)):
        raise ConfigError(f"{path}: truncated checkpoint")
    values = np.frombuffer(body, dtype="<c16")
    return Field(grid, values.reshape(grid.shape).astype(complex), float(header["time"])), header


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------
def _dc_keys(cls) -> set[str]:
    return {f.name for f in dc_fields(cls)}


def _schema() -> dict[str, set[str]]:
    from .solver import RescaledConfig, SolverConfig, StopPredicate

    return {
        "limits": {"wall_clock", "memory_mb"},
        "ground": {"dimension", "r_max", "tol", "step", "agreement"},
        "profile": {"b", "eta", "radiation"},
        "grid": {"dimension", "box_length", "n_points"},
        "initial": {"kind", "params", "time", "path"},
        "solver": (_dc_keys(SolverConfig) - {"q0"}),
        "solver.stop": _dc_keys(StopPredicate),
        "rescaled": {"b0", "log_lambda0", "box_length", "n_points", "eta", "config", "alpha"},
        "rescaled.config": _dc_keys(RescaledConfig),
        "decompose": {"bubble", "guess", "box_length", "n_points", "eta", "noise"},
        "multibubble": {"spec", "lambda_stop", "validate", "exterior", "alpha"},
        "multibubble.exterior": {"a0", "d0", "K1", "geometry_scale"},
        "diagnose": {"trace", "time_unit_log", "alpha", "delta1", "mass_tol", "energy_tol"},
        "balance": {"spec", "lambda_stop", "a0", "a1", "a2", "rel_tol", "pos_tol", "n_boundary",
                    "tol", "max_iter", "confirm", "workers"},
    }


_MODE_SECTIONS = {
    "ground": ({"ground"}, set()),
    "profile": ({"profile"}, {"ground"}),
    "evolve": ({"grid", "initial", "solver"}, {"ground"}),
    "rescaled": ({"rescaled"}, {"ground"}),
    "decompose": ({"decompose"}, {"ground"}),
    "multibubble": ({"multibubble", "solver"}, {"ground"}),
    "diagnose": ({"diagnose"}, {"ground", "grid", "initial", "solver"}),
    "balance": ({"balance", "solver"}, {"ground"}),
}

_INITIAL_KINDS = {"zero", "soliton", "pseudoconformal_S", "plane_wave", "gaussian", "checkpoint"}


def _check_keys(where: str, doc: Any, allowed: set[str]) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def validate_config(doc: dict, mode: str) -> None:
    """Reject unknown modes, sections and keys before any compute.

    Raises
    ------
    ConfigError
        On any schema violation.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    schema = _schema()
    required, optional = _MODE_SECTIONS[mode]
    _check_keys("config", doc, {"mode", "seed", "limits"} | required | optional)
    if "mode" in doc and doc["mode"] != mode:
        raise ConfigError(f"config mode {doc['mode']!r} differs from requested {mode!r}")
    missing = required - set(doc)
    if missing:
        raise ConfigError(f"missing sections {sorted(missing)}")
    if "seed" in doc and not isinstance(doc["seed"], int):
        raise ConfigError("seed must be an integer")
    for sec in (required | optional | {"limits"}) & set(doc):
        _check_keys(sec, doc[sec], schema[sec])
    if "solver" in doc and "stop" in doc["solver"]:
        _check_keys("solver.stop", doc["solver"]["stop"], schema["solver.stop"])
    if "rescaled" in doc and "config" in doc["rescaled"]:
        _check_keys("rescaled.config", doc["rescaled"]["config"], schema["rescaled.config"])
    if "multibubble" in doc and "exterior" in doc["multibubble"]:
        _check_keys("multibubble.exterior", doc["multibubble"]["exterior"], schema["multibubble.exterior"])
    if "initial" in doc:
        kind = doc["initial"].get("kind")
        if kind not in _INITIAL_KINDS:
            raise ConfigError(f"initial.kind must be one of {sorted(_INITIAL_KINDS)}")
    if mode == "diagnose" and "trace" not in doc["diagnose"] and "initial" not in doc:
        raise ConfigError("diagnose needs a trace file or grid/initial/solver sections")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------
def _json_text(obj) -> str:
    from .diagnostics import _jsonable

    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


class _Run:
    """Output directory, written-file registry and report-level verdicts."""

    def __init__(self, out: Path, config: dict, mode: str, seed: int, base_dir: Path):
        self.out = out
        self.config = config
        self.mode = mode
        self.seed = seed
        self.base_dir = base_dir
        self.files: list[str] = []
        self.report_failed = False
        self.resource_hit: str | None = None
        self.hash = _config_hash(config)

    def path(self, name: str) -> Path:
        return self.out / name

    def text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)
        self.files.append(name)

    def json(self, name: str, obj) -> None:
        self.text(name, _json_text(obj))

    def saved(self, name: str) -> None:
        self.files.append(name)

    def checkpoint(self, name: str, field: Field) -> None:
        write_checkpoint(self.path(name), field, self.hash)
        self.files.append(name)

    def verdict(self, passed: bool) -> None:
        if not passed:
            self.report_failed = True

    def wall_clock(self) -> float | None:
        return self.config.get("limits", {}).get("wall_clock")


def _ground(doc: dict):
    from .groundstate import solve_ground_state

    sec = dict(doc.get("ground", {}))
    return solve_ground_state(**sec)


def _solver_config(doc: dict, q0: float | None, run: _Run):
    from .solver import SolverConfig, StopPredicate

    sec = dict(doc.get("solver", {}))
    stop = dict(sec.pop("stop", {}))
    limit = run.wall_clock()
    if limit is not None:
        stop["wall_clock"] = min(limit, stop.get("wall_clock", limit))
    try:
        return SolverConfig(**sec, stop=StopPredicate(**stop), q0=q0)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _grid(doc: dict) -> Grid:
    g = doc["grid"]
    return Grid.cube(int(g.get("dimension", 1)), float(g["box_length"]), int(g["n_points"]))


def _initial(doc: dict, grid: Grid, ground, base_dir: Path) -> Field:
    from .solver import reference_solution

    sec = doc["initial"]
    kind = sec["kind"]
    params = dict(sec.get("params", {}))
    t = float(sec.get("time", 0.0))
    if kind == "zero":
        return Field(grid, np.zeros(grid.shape, complex), t)
    if kind == "checkpoint":
        field, _ = read_checkpoint(base_dir / sec["path"])
        return field
    if kind == "gaussian":
        amp = float(params.get("amplitude", 1.0))
        width = float(params.get("width", 1.0))
        r = grid.radius(params.get("center"))
        return Field(grid, (amp * np.exp(-(r / width) ** 2)).astype(complex), t)
    return reference_solution(kind, grid, t, params, ground)


def _memory_estimate_mb(doc: dict) -> float:
    pts = 0
    for key in ("grid", "rescaled", "decompose"):
        if key in doc and "n_points" in doc[key]:
            pts = max(pts, int(doc[key]["n_points"]) ** int(doc[key].get("dimension", 1)))
    for key in ("multibubble", "balance"):
        spec = doc.get(key, {}).get("spec")
        if spec and "n_points" in spec:
            pts = max(pts, int(spec["n_points"]) ** len(np.atleast_1d(spec["bubbles"][0]["x"])))
    # roughly twenty complex work arrays per grid
    return pts * 16 * 20 / 2**20


# ---------------------------------------------------------------------------
# mode pipelines
# ---------------------------------------------------------------------------
def _mode_ground(run: _Run) -> None:
    from .diagnostics import Check, CheckReport
    from .groundstate import closed_form_1d

    g = _ground(run.config)
    g.to_csv(run.path("ground.csv"))
    run.saved("ground.csv")
    rep = CheckReport()
    rep.checks.append(Check.le("energy", "E(Q) = 0", abs(g.energy()), 1e-6))
    rep.checks.append(Check.le("lambda_pairing", "(Q, ΛQ) = 0", abs(g.lambda_pairing()), 1e-8))
    if g.dimension == 1:
        r = g.radial_grid[g.radial_grid <= 10.0]
        err = float(np.max(np.abs(g(r) - closed_form_1d(r))))
        rep.checks.append(Check.le("closed_form", "sup |Q − Q_exact| on |x| ≤ 10", err, 1e-8))
    rep.extra.update({"q0": g.q0, "mass": g.mass(), "decay_rate": g.decay_rate, "residual": g.residual})
    run.json("ground_report.json", rep.to_dict())
    run.verdict(rep.passed)


def _mode_profile(run: _Run) -> None:
    from .diagnostics import Check, CheckReport
    from .profiles import profile_family_report, solve_modified_profile, solve_radiation

    g = _ground(run.config)
    sec = run.config["profile"]
    bs = [float(b) for b in np.atleast_1d(sec["b"])]
    eta = float(sec.get("eta", 0.01))
    rep = CheckReport()
    for b in bs:
        prof = solve_modified_profile(b, eta, g)
        name = f"profile_b{b:.6g}.csv"
        prof.to_csv(run.path(name))
        run.saved(name)
        if sec.get("radiation", False):
            rad = solve_radiation(b, prof)
            rname = f"radiation_b{b:.6g}.csv"
            cols = [rad.radial_grid, rad.zeta.real, rad.zeta.imag, rad.zeta_cut.real, rad.zeta_cut.imag]
            np.savetxt(run.path(rname), np.column_stack(cols), delimiter=",",
                       header="r,re_zeta,im_zeta,re_zeta_cut,im_zeta_cut", comments="", fmt="%.17g")
            run.saved(rname)
    fam = profile_family_report(bs, g, eta)
    for e in fam["entries"]:
        rep.checks.append(Check.ge("mass_excess_positive", "∫|Q̃_b|² > ∫Q²", e["mass_excess"], 0.0, strict=True))
    rep.extra["family"] = fam
    run.json("profiles_report.json", rep.to_dict())
    run.verdict(rep.passed)


def _trace_csv(run: _Run, name: str, obs: dict) -> None:
    keys = ["t", "s", "mass", "energy"] + sorted(k for k in obs if k.startswith("momentum_")) + \
        ["grad_norm", "sup_norm", "lambda"]
    cols = [np.asarray(obs[k], float) for k in keys]
    np.savetxt(run.path(name), np.column_stack(cols), delimiter=",", header=",".join(keys),
               comments="", fmt="%.17g")
    run.saved(name)


def _with_scale(obs: dict, q0: float, d: int) -> dict:
    sup = np.asarray(obs["sup_norm"], float)
    with np.errstate(divide="ignore"):
        lam = np.where(sup > 0, (q0 / np.where(sup > 0, sup, 1.0)) ** (2.0 / d), np.inf)
    t = np.asarray(obs["t"], float)
    s = np.zeros_like(t)
    if t.size > 1 and np.all(np.isfinite(lam)):
        s[1:] = np.cumsum(0.5 * (lam[1:] ** -2 + lam[:-1] ** -2) * np.diff(t))
    return {**obs, "lambda": lam, "s": s}


def _conservation(rep, obs: dict, mass_tol: float, energy_tol: float) -> None:
    from .diagnostics import Check

    m = np.asarray(obs["mass"], float)
    e = np.asarray(obs["energy"], float)
    rep.checks.append(Check.le("mass_drift", "|M(t) − M(0)|/M(0)",
                               float(np.max(np.abs(m - m[0]))) / m[0] if m[0] > 0 else 0.0, mass_tol))
    scale = max(abs(e[0]), 1.0)
    rep.checks.append(Check.le("energy_drift", "|E(t) − E(0)|/max(|E(0)|, 1)",
                               float(np.max(np.abs(e - e[0]))) / scale, energy_tol))
    for k in sorted(k for k in obs if k.startswith("momentum_")):
        p = np.asarray(obs[k], float)
        rep.checks.append(Check.le(k + "_drift", "|P(t) − P(0)|", float(np.max(np.abs(p - p[0]))), energy_tol))


def _evolve_field(run: _Run, ground):
    from .solver import evolve

    grid = _grid(run.config)
    u0 = _initial(run.config, grid, ground, run.base_dir)
    cfg = _solver_config(run.config, ground.q0 if ground is not None else None, run)
    if not np.any(u0.values):
        from .solver import _observe

        row = _observe(u0.values, grid, u0.time)
        obs = {k: np.array([v]) for k, v in row.items()}
        return u0, u0, obs, "zero_field", 0
    traj = evolve(u0, cfg)
    if traj.stop_reason == "wall_clock":
        run.resource_hit = "wall_clock"
    return u0, traj.final, traj.observables, traj.stop_reason, traj.steps


def _mode_evolve(run: _Run) -> None:
    from .diagnostics import CheckReport

    ground = _ground(run.config)
    u0, final, obs, reason, steps = _evolve_field(run, ground)
    obs = _with_scale(obs, ground.q0, u0.dimension)
    _trace_csv(run, "trace.csv", obs)
    run.checkpoint("initial.chk", u0)
    run.checkpoint("final.chk", final)
    rep = CheckReport(extra={"stop_reason": reason, "steps": steps, "events": [] if reason == "zero_field" else [reason]})
    run.json("evolve_report.json", rep.to_dict())


def _mode_rescaled(run: _Run) -> None:
    from .diagnostics import bootstrap_report, fit_blowup_time
    from .errors import ConvergenceError
    from .modulation import BubbleParams, place_profile
    from .multibubble import BubbleTrace
    from .profiles import ProfileFamily
    from .solver import RescaledConfig, evolve_rescaled_frame

    sec = run.config["rescaled"]
    ground = _ground(run.config)
    fam = ProfileFamily(ground, eta=float(sec.get("eta", 0.01)))
    b0 = float(sec["b0"])
    ll0 = float(sec["log_lambda0"]) if "log_lambda0" in sec else -math.exp(math.pi / b0)
    grid = Grid.cube(ground.dimension, float(sec.get("box_length", 80.0)), int(sec.get("n_points", 1024)))
    ccfg = dict(sec.get("config", {}))
    if run.wall_clock() is not None:
        ccfg["wall_clock"] = min(run.wall_clock(), ccfg.get("wall_clock", math.inf))
    cfg = RescaledConfig(**ccfg)
    prof = fam(b0)
    u0 = Field(grid, place_profile(grid, prof, BubbleParams(b0, 1.0, (0.0,) * grid.dimension, 0.0)))
    traj = evolve_rescaled_frame(u0, fam, b0, ll0, cfg)
    if traj.stop_reason == "wall_clock":
        run.resource_hit = "wall_clock"
    tr = BubbleTrace.from_rescaled(traj.trace, ll0)
    tr.to_csv(run.path("bubble_0.csv"))
    run.saved("bubble_0.csv")
    run.checkpoint("final.chk", traj.final)
    rep = bootstrap_report([tr], alpha=float(sec.get("alpha", 0.6)))
    try:
        rep.extra["blowup_fit"] = fit_blowup_time(tr.t, tr.log_lam, tr.time_unit_log).as_dict()
    except (ConvergenceError, ConfigError) as exc:
        rep.extra["blowup_fit"] = {"error": str(exc)}
    rep.extra.update({"stop_reason": traj.stop_reason, "time_unit_log": tr.time_unit_log,
                      "log_lambda0": ll0, "n_bubbles": 1})
    run.json("rescaled_report.json", rep.to_dict())
    run.verdict(rep.passed)


def _mode_decompose(run: _Run) -> None:
    from .diagnostics import Check, CheckReport
    from .modulation import BubbleParams, decompose, orthogonality_residuals, place_profile
    from .profiles import ProfileFamily

    sec = run.config["decompose"]
    ground = _ground(run.config)
    fam = ProfileFamily(ground, eta=float(sec.get("eta", 0.01)))
    bub = sec["bubble"]
    _check_keys("decompose.bubble", bub, {"b", "lambda", "x", "gamma"})
    truth = BubbleParams(float(bub["b"]), float(bub["lambda"]), tuple(np.atleast_1d(bub["x"]).astype(float)),
                         float(bub.get("gamma", 0.0)))
    grid = Grid.cube(truth.dimension, float(sec.get("box_length", 40.0)), int(sec.get("n_points", 4096)))
    vals = place_profile(grid, fam(truth.b), truth)
    noise = float(sec.get("noise", 0.0))
    if noise:
        rng = np.random.default_rng(run.seed)
        vals = vals + noise * (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    if "guess" in sec:
        gs = sec["guess"]
        _check_keys("decompose.guess", gs, {"b", "lambda", "x", "gamma"})
        guess = BubbleParams(float(gs["b"]), float(gs["lambda"]), tuple(np.atleast_1d(gs["x"]).astype(float)),
                             float(gs.get("gamma", 0.0)))
    else:
        guess = BubbleParams(0.8 * truth.b, 1.2 * truth.lam,
                             tuple(np.asarray(truth.x_center) + 0.2 * truth.lam), truth.gamma + 0.2)
    params, eps = decompose(Field(grid, vals), guess, fam, tol=1e-12)
    orth = orthogonality_residuals(eps, fam(params.b))
    rep = CheckReport()
    rep.checks.append(Check.le("orthogonality", "max |(ε, direction)|", float(np.max(np.abs(orth))), 1e-8))
    if noise == 0.0:
        err = max(abs(params.b - truth.b), abs(params.lam - truth.lam) / truth.lam,
                  float(np.max(np.abs(np.subtract(params.x_center, truth.x_center)))),
                  abs(math.remainder(params.gamma - truth.gamma, 2 * math.pi)))
        rep.checks.append(Check.le("round_trip", "parameter recovery", err, 1e-10))
    rep.extra["fitted"] = {"b": params.b, "lambda": params.lam, "x": list(params.x_center), "gamma": params.gamma}
    run.json("decompose_report.json", rep.to_dict())
    run.verdict(rep.passed)


def _mode_multibubble(run: _Run) -> None:
    from .diagnostics import ExteriorMonitor, bootstrap_report
    from .multibubble import MultiBubbleSpec, Tracker, build_initial_data, report_json
    from .profiles import ProfileFamily
    from .solver import evolve

    sec = run.config["multibubble"]
    spec = MultiBubbleSpec.from_dict(sec["spec"])
    if spec.epsilon_seed and spec.epsilon_seed.get("kind") == "noise" and "seed" not in spec.epsilon_seed:
        spec.epsilon_seed = {**spec.epsilon_seed, "seed": run.seed}
    ground = _ground(run.config)
    fam = ProfileFamily(ground, eta=spec.eta)
    u0, lines = build_initial_data(spec, fam, validate=bool(sec.get("validate", False)))
    run.checkpoint("initial.chk", u0)
    if lines is not None:
        run.text("well_prepared.json", report_json(lines) + "\n")
        run.verdict(all(ln.passed for ln in lines))
    lam_stop = sec.get("lambda_stop")
    tracker = Tracker(spec, fam, lambda_stop=lam_stop)
    ext = None
    observer: Callable = tracker
    if "exterior" in sec:
        e = sec["exterior"]
        ext = ExteriorMonitor(u0.grid, [bp.x_center for bp in spec.bubbles], **e)

        def observer(f, row):
            ext(f, row)
            return tracker(f, row)

    cfg = _solver_config(run.config, ground.q0, run)
    traj = evolve(u0, cfg, observer=observer)
    if traj.stop_reason == "wall_clock":
        run.resource_hit = "wall_clock"
    traces = tracker.traces()
    for j, tr in enumerate(traces):
        tr.to_csv(run.path(f"bubble_{j}.csv"))
        run.saved(f"bubble_{j}.csv")
    run.checkpoint("final.chk", traj.final)
    exterior = None
    if ext is not None:
        ser = ext.series()
        np.savetxt(run.path("exterior.csv"), np.column_stack([ser["t"], ser["norm"], ser["grad_sq"], ser["flux"]]),
                   delimiter=",", header="t,norm,grad_sq,flux", comments="", fmt="%.17g")
        run.saved("exterior.csv")
        exterior = {"norm": ser["norm"]}
    rep = bootstrap_report(traces, alpha=float(sec.get("alpha", 0.6)), exterior=exterior,
                           lambda0=[bp.lam for bp in spec.bubbles], x0=[bp.x_center for bp in spec.bubbles])
    rep.extra.update({"stop_reason": traj.stop_reason, "first_floor": tracker.first_floor,
                      "failure": tracker.failure, "n_bubbles": spec.m, "lambda_stop": lam_stop})
    run.json("multibubble_report.json", rep.to_dict())
    run.verdict(rep.passed)


def _mode_diagnose(run: _Run) -> None:
    from .diagnostics import CheckReport, bootstrap_report, fit_blowup_time, lwp_partition
    from .errors import ConvergenceError
    from .multibubble import BubbleTrace

    sec = run.config["diagnose"]
    rep = CheckReport()
    if "initial" in run.config:
        ground = _ground(run.config)
        u0, final, obs, reason, steps = _evolve_field(run, ground)
        obs = _with_scale(obs, ground.q0, u0.dimension)
        _trace_csv(run, "trace.csv", obs)
        _conservation(rep, obs, float(sec.get("mass_tol", 1e-8)), float(sec.get("energy_tol", 1e-6)))
        rep.extra.update({"stop_reason": reason, "steps": steps})
    if "trace" in sec:
        unit = float(sec.get("time_unit_log", 0.0))
        tr = BubbleTrace.from_csv(run.base_dir / sec["trace"], unit)
        sub = bootstrap_report([tr], alpha=float(sec.get("alpha", 0.6)))
        rep.checks.extend(sub.checks)
        rep.extra.update(sub.extra)
        try:
            rep.extra["blowup_fit"] = fit_blowup_time(tr.t, tr.log_lam, unit).as_dict()
        except (ConvergenceError, ConfigError) as exc:
            rep.extra["blowup_fit"] = {"error": str(exc)}
        try:
            lwp = lwp_partition(tr.t, tr.log_lam, float(sec.get("delta1", 0.1)), unit)
            rep.extra["lwp"] = lwp.as_dict()
        except ConfigError as exc:
            rep.extra["lwp"] = {"error": str(exc)}
        rep.extra["n_bubbles"] = 1
    run.json("diagnose_report.json", rep.to_dict())
    run.verdict(rep.passed)


def _mode_balance(run: _Run) -> None:
    from .balance import BalanceProblem, boundary_certificate, confirm_root, find_balanced
    from .multibubble import MultiBubbleSpec
    from .profiles import ProfileFamily

    sec = dict(run.config["balance"])
    spec = MultiBubbleSpec.from_dict(sec.pop("spec"))
    ground = _ground(run.config)
    fam = ProfileFamily(ground, eta=spec.eta)
    cfg = _solver_config(run.config, ground.q0, run)
    workers = int(os.environ.get("MULTIBLOWUP_THREADS", sec.pop("workers", 1)))
    sec.pop("workers", None)
    n_boundary = int(sec.pop("n_boundary", 32))
    tol = float(sec.pop("tol", 0.2))
    max_iter = int(sec.pop("max_iter", 8))
    confirm = bool(sec.pop("confirm", True))
    lam_stop = float(sec.pop("lambda_stop", spec.bubbles[0].lam / 4))
    problem = BalanceProblem(spec, fam, cfg, lambda_stop=lam_stop, seed=run.seed, workers=workers, **sec)
    log: list[dict] = []
    cert = boundary_certificate(problem, n_boundary, log=log) if n_boundary > 0 else None
    res = find_balanced(problem, tol=tol, max_iter=max_iter)
    offset = len(log)
    for rec in res.log:
        log.append({**rec, "index": rec["index"] + offset, "stage": "search"})
    for rec in log[:offset]:
        rec["stage"] = "certificate"
    root = {"point": res.point.as_record(), "residual": res.residual, "converged": res.converged,
            "iterations": res.iterations}
    if confirm and res.point.endpoint is not None:
        c = confirm_root(res.point, problem, refine_time=False)
        root["confirmation"] = {"residual_old": c["residual_old"], "residual_new": c["residual_new"],
                                "growth": c["growth"], "status": c["status"],
                                "point": c["point"].as_record()}
        run.verdict(c["growth"] < 2.0)
    run.text("search_log.jsonl", "".join(json.dumps(_json_roundtrip(r), sort_keys=True) + "\n" for r in log))
    if cert is not None:
        run.text("certificate.json", cert.to_json() + "\n")
        run.verdict(cert.passed)
    run.json("root.json", root)
    run.verdict(res.converged and res.point.residual(problem) <= 1.0)


def _json_roundtrip(obj):
    from .diagnostics import _jsonable

    return _jsonable(obj)


_PIPELINES = {
    "ground": _mode_ground,
    "profile": _mode_profile,
    "evolve": _mode_evolve,
    "rescaled": _mode_rescaled,
    "decompose": _mode_decompose,
    "multibubble": _mode_multibubble,
    "diagnose": _mode_diagnose,
    "balance": _mode_balance,
}


def _versions() -> dict:
    return {"multiblowup": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "kernels": BACKEND}


def run(mode: str, config_path, out: str | os.PathLike | None = None, seed: int | None = None) -> int:
    """Execute one mode pipeline and write the artifact tree; returns the exit status."""
    config_path = Path(config_path)
    try:
        doc = json.loads(config_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        validate_config(doc, mode)
    except ConfigError as exc:
        print(f"schema violation: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    seed = int(seed if seed is not None else doc.get("seed", 0))
    out_dir = Path(os.environ.get("MULTIBLOWUP_OUT") or out or "run_" + mode)
    limits = doc.get("limits", {})
    if "memory_mb" in limits and _memory_estimate_mb(doc) > float(limits["memory_mb"]):
        print("resource limit: memory estimate exceeds limits.memory_mb", file=sys.stderr)
        return EXIT_RESOURCE
    out_dir.mkdir(parents=True, exist_ok=True)
    r = _Run(out_dir, doc, mode, seed, config_path.resolve().parent)
    status = EXIT_OK
    error = None
    try:
        _PIPELINES[mode](r)
    except ConfigError as exc:
        status, error = EXIT_SCHEMA, str(exc)
    except ResourceLimit as exc:
        status, error = EXIT_RESOURCE, str(exc)
    except (MultiBlowupError, ValueError, ArithmeticError) as exc:
        status, error = EXIT_ERROR, f"{type(exc).__name__}: {exc}"
    if status == EXIT_OK:
        if r.resource_hit:
            status, error = EXIT_RESOURCE, f"limit hit: {r.resource_hit}"
        elif r.report_failed:
            status = EXIT_REPORT
    manifest = {
        "format_version": 1,
        "mode": mode,
        "seed": seed,
        "config": doc,
        "config_sha256": r.hash,
        "versions": _versions(),
        "exit_code": status,
        "error": error,
        "files": {name: _sha256(out_dir / name) for name in sorted(set(r.files))},
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if error:
        print(f"error: {error}", file=sys.stderr)
    return status


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------
def _load_manifest(run_dir: Path) -> dict:
    path = run_dir / MANIFEST
    try:
        man = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"missing or corrupt manifest: {exc}") from exc
    if not isinstance(man, dict) or "files" not in man or "mode" not in man:
        raise ConfigError("corrupt manifest: missing files or mode")
    return man


def _plot_series(header: Sequence[str], cols: Sequence[np.ndarray]) -> str:
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def report(run_dir) -> int:
    """Merge the module reports of a run directory and emit plot-ready CSVs.

    Writes ``report.json`` and ``plot_*.csv``; their digests are added to the
    manifest under ``report_files``.  Returns 1 on a missing or corrupt
    manifest, on a digest mismatch, or when the directory holds files the
    manifest does not reference.
    """
    from .multibubble import BubbleTrace

    run_dir = Path(run_dir)
    try:
        man = _load_manifest(run_dir)
        files = man["files"]
        prev = man.get("report_files", {})
        present = {p.name for p in run_dir.iterdir() if p.is_file()}
        unref = present - set(files) - set(prev) - {MANIFEST}
        if unref:
            raise ConfigError(f"unreferenced files: {sorted(unref)}")
        for name, digest in files.items():
            if name not in present:
                raise ConfigError(f"missing output {name}")
            if _sha256(run_dir / name) != digest:
                raise ConfigError(f"digest mismatch for {name}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sections = {}
    for name in sorted(files):
        if name.endswith(".json"):
            sections[name] = json.loads((run_dir / name).read_text())
    out: dict = {"mode": man["mode"], "seed": man["seed"], "exit_code": man["exit_code"],
                 "sections": sections, "bubbles": []}
    written: dict[str, str] = {}
    unit = 0.0
    for sec in sections.values():
        if isinstance(sec, dict):
            unit = float(sec.get("extra", {}).get("time_unit_log", unit))
    bubble_files = sorted((n for n in files if n.startswith("bubble_") and n.endswith(".csv")),
                          key=lambda n: int(n[7:-4]))
    for name in bubble_files:
        j = int(name[7:-4])
        tr = BubbleTrace.from_csv(run_dir / name, unit)
        ll = tr.log_lam
        with np.errstate(invalid="ignore", divide="ignore"):
            y = np.exp(2 * ll - unit) * np.log(np.abs(ll))
            ln_s = np.log(tr.s)
        out["bubbles"].append({
            "index": j, "trace": name, "samples": len(tr),
            "b_first": float(tr.b[0]), "b_last": float(tr.b[-1]),
            "log_lambda_first": float(ll[0]), "log_lambda_last": float(ll[-1]),
        })
        written[f"plot_loglog_{j}.csv"] = _plot_series(["t", "lambda2_lnln"], [tr.t, y])
        written[f"plot_b_vs_pi_over_ln_s_{j}.csv"] = _plot_series(
            ["s", "b", "pi_over_ln_s"], [tr.s, tr.b, math.pi / ln_s])
    if "exterior.csv" in files:
        ext = np.atleast_2d(np.loadtxt(run_dir / "exterior.csv", delimiter=",", skiprows=1))
        written["plot_exterior.csv"] = _plot_series(["t", "norm"], [ext[:, 0], ext[:, 1]])
    if "lyapunov.csv" in files:
        ly = np.atleast_2d(np.loadtxt(run_dir / "lyapunov.csv", delimiter=",", skiprows=1))
        written["plot_j_over_b2.csv"] = _plot_series(["s", "J_over_b2"], [ly[:, 0], ly[:, 1]])
    if "certificate.json" in files:
        out["certificate"] = json.loads((run_dir / "certificate.json").read_text())
    written["report.json"] = _json_text(out)
    for name, text in written.items():
        (run_dir / name).write_text(text)
    man["report_files"] = {name: _sha256(run_dir / name) for name in sorted(written)}
    (run_dir / MANIFEST).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multiblowup", description="Multi-bubble log-log blow-up laboratory.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute one pipeline")
    r.add_argument("mode", choices=MODES)
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    rep = sub.add_parser("report", help="consolidate a run directory")
    rep.add_argument("dir")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    p = _parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_SCHEMA
    if args.command == "run":
        return run(args.mode, args.config, args.out, args.seed)
    return report(args.dir)


if __name__ == "__main__":
    sys.exit(main())
