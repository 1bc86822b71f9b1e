"""Split-step evolution of ``i u_t = −Δu − |u|^{4/d} u`` on periodic grids.

Physical frame: Strang splitting with the exact nonlinear phase rotation
(``|u|`` is invariant under it, so consecutive half-steps are merged) and the
exact linear propagator ``e^{−i|ξ|²dt}``.

Rescaled frame: the field ``v(s, y) = λ_f^{d/2} u(t, λ_f y + x_f) e^{iγ_f}``
on a fixed ``y`` grid obeys

    v_s = iΔv + i|v|^{4/d}v + a Λv + c·∇v + i g v,

with frame velocities ``a = (ln λ_f)_s``, ``c = (x_f)_s/λ_f`` and
``g = (γ_f)_s``.  These are fed back from the modulation fit so that the
bubble stays centred at unit scale.  Outgoing radiation drifts to the box
edge and is absorbed by a smooth sponge.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, RegimeError, ResolutionError
from .grid import Field, Grid, plateau
from .groundstate import GroundStateProfile, functionals, nonlinear_power
from .kernels import nonlinear_phase

log = logging.getLogger(__name__)

__all__ = [
    "StopPredicate",
    "SolverConfig",
    "Trajectory",
    "step",
    "evolve",
    "stable_dt",
    "tail_fraction",
    "reference_solution",
    "apply_symmetry",
    "spectral_interpolate",
    "RescaledConfig",
    "RescaledTrajectory",
    "evolve_rescaled_frame",
]


# ---------------------------------------------------------------------------
# physical frame
# ---------------------------------------------------------------------------
@dataclass
class StopPredicate:
    """Stopping rules checked at every checkpoint.

    Attributes
    ----------
    t_end : float, optional
        Final time.
    max_steps : int, optional
    grad_growth : float, optional
        Stop once ``‖∇u‖₂ ≥ grad_growth · ‖∇u₀‖₂``.
    lambda_floor : float, optional
        Stop once the sup-norm scale ``(Q(0)/‖u‖_∞)^{2/d}`` falls below it.
    tail_threshold : float
        Resolution loss when the top-octave spectral fraction exceeds this.
    wall_clock : float, optional
        Seconds.
    """

    t_end: float | None = None
    max_steps: int | None = None
    grad_growth: float | None = None
    lambda_floor: float | None = None
    tail_threshold: float = 1e-3
    wall_clock: float | None = None


@dataclass
class SolverConfig:
    """Step-size rule ``dt = dt_safety·min(linear_weight·dx², ‖u‖_∞^{−4/d})``.

    ``linear_weight = 1`` is the plain ``dx²`` rule.  Blow-up runs raise it,
    because the split-step scheme is unconditionally stable for the linear
    part and accuracy is governed by the nonlinear time scale.
    """

    dt_safety: float = 0.5
    linear_weight: float = 1.0
    dt_fixed: float | None = None
    dt_max: float | None = None
    dealias: bool = False
    stop: StopPredicate = dc_field(default_factory=StopPredicate)
    output_dt: float | None = None
    output_ds: float | None = None
    keep_fields: bool = True
    q0: float | None = None

    def __post_init__(self) -> None:
        if not 0 < self.dt_safety <= 1:
            raise ConfigError("dt_safety must lie in (0, 1]")
        if self.dt_fixed is not None and not self.dt_fixed > 0:
            raise ConfigError("dt_fixed must be positive")


@dataclass
class Trajectory:
    checkpoints: list[Field]
    observables: dict[str, np.ndarray]
    stop_reason: str
    steps: int
    final: Field


def stable_dt(u: np.ndarray, grid: Grid, config: SolverConfig) -> float:
    if config.dt_fixed is not None:
        return config.dt_fixed
    p = nonlinear_power(grid.dimension)
    sup = float(np.max(np.abs(u)))
    dx2 = min(grid.dx) ** 2
    nl = sup ** (-p) if sup > 0 else math.inf
    dt = config.dt_safety * min(config.linear_weight * dx2, nl)
    if config.dt_max is not None:
        dt = min(dt, config.dt_max)
    return dt


def tail_fraction(u: np.ndarray, grid: Grid) -> float:
    """Fraction of ``Σ|û|²`` carried by wavenumbers above half the Nyquist value."""
    uh = np.abs(grid.fft(u)) ** 2
    total = float(uh.sum())
    if total == 0:
        return 0.0
    kmax = grid.kmax
    mask = np.zeros(grid.shape, bool)
    for k in grid.wavenumbers:
        mask |= np.abs(k) > 0.5 * kmax
    return float(uh[mask].sum() / total)


class _LinearPropagator:
    def __init__(self, grid: Grid, dealias: bool):
        self.grid = grid
        self.dt = None
        self.mult = None
        self.mask = None
        if dealias:
            kmax = grid.kmax
            m = np.ones(grid.shape, bool)
            for k in grid.wavenumbers:
                m &= np.abs(k) <= (2.0 / 3.0) * kmax
            self.mask = m

    def __call__(self, u: np.ndarray, dt: float) -> np.ndarray:
        if dt != self.dt:
            self.mult = np.exp(-1j * self.grid.k2 * dt)
            if self.mask is not None:
                self.mult = self.mult * self.mask
            self.dt = dt
        return self.grid.ifft(self.mult * self.grid.fft(u))


def _nl(u: np.ndarray, dt: float, power: float) -> np.ndarray:
    flat = np.ascontiguousarray(u).reshape(-1)
    nonlinear_phase(flat, dt, power)
    return flat.reshape(u.shape)


def step(field: Field, dt: float, dealias: bool = False) -> Field:
    """One Strang step: nonlinear half step, linear step, nonlinear half step."""
    if not dt > 0:
        raise ConfigError("dt must be positive")
    grid = field.grid
    p = nonlinear_power(grid.dimension)
    u = field.values.astype(complex, copy=True)
    u = _nl(u, 0.5 * dt, p)
    u = _LinearPropagator(grid, dealias)(u, dt)
    u = _nl(u, 0.5 * dt, p)
    if not np.all(np.isfinite(u)):
        raise ResolutionError("non-finite values after step")
    return field.with_values(u, field.time + dt)


def _observe(u: np.ndarray, grid: Grid, t: float) -> dict:
    f = functionals(Field(grid, u, t))
    row = {
        "t": t,
        "mass": f.mass,
        "energy": f.energy,
        "grad_norm": math.sqrt(grid.grad_norm_sq(u)),
        "sup_norm": float(np.max(np.abs(u))),
    }
    for i, pi in enumerate(f.momentum):
        row[f"momentum_{i}"] = pi
    return row


def evolve(
    field: Field,
    config: SolverConfig,
    observer: Callable[[Field, dict], str | None] | None = None,
) -> Trajectory:
    """Repeated Strang steps with adaptive ``dt`` and checkpoint observables.

    Checkpoints are taken at the start, every ``output_dt`` in ``t`` or every
    ``output_ds`` in the sup-norm rescaled clock ``∫dt/λ_est²``, and at the
    stop.  ``observer(field, row)`` may return a stop reason.

    Returns
    -------
    Trajectory
        ``stop_reason`` is one of ``t_end``, ``max_steps``, ``grad_growth``,
        ``lambda_floor``, ``resolution``, ``wall_clock`` or an observer string.
    """
    grid = field.grid
    d = grid.dimension
    p = nonlinear_power(d)
    stop = config.stop
    q0 = config.q0
    lin = _LinearPropagator(grid, config.dealias)
    u = field.values.astype(complex, copy=True)
    t = float(field.time)
    rows: list[dict] = []
    checkpoints: list[Field] = []
    start_wall = _time.perf_counter()

    def lam_est(v):
        sup = float(np.max(np.abs(v)))
        if q0 is None or sup == 0:
            return math.inf
        return (q0 / sup) ** (2.0 / d)

    def checkpoint(v, tt):
        row = _observe(v, grid, tt)
        row["tail"] = tail_fraction(v, grid)
        rows.append(row)
        f = Field(grid, v.copy(), tt)
        if config.keep_fields:
            checkpoints.append(f)
        reason = observer(f, row) if observer is not None else None
        return row, reason

    row0, reason = checkpoint(u, t)
    grad0 = row0["grad_norm"]
    steps = 0
    pending = 0.0  # nonlinear half-step not yet applied
    next_out_t = t + config.output_dt if config.output_dt else math.inf
    s_acc = 0.0

    def check(row):
        if stop.t_end is not None and t >= stop.t_end - 1e-14 * max(1.0, abs(stop.t_end)):
            return "t_end"
        if stop.grad_growth is not None and grad0 > 0 and row["grad_norm"] >= stop.grad_growth * grad0:
            return "grad_growth"
        if stop.lambda_floor is not None and lam_est(u) <= stop.lambda_floor:
            return "lambda_floor"
        if row["tail"] > stop.tail_threshold:
            return "resolution"
        if stop.max_steps is not None and steps >= stop.max_steps:
            return "max_steps"
        if stop.wall_clock is not None and _time.perf_counter() - start_wall > stop.wall_clock:
            return "wall_clock"
        return None

    if reason is None:
        reason = check(row0)
    while reason is None:
        dt = stable_dt(u, grid, config)
        landing = False
        if stop.t_end is not None and t + dt >= stop.t_end:
            dt = stop.t_end - t
            landing = True
        if t + dt >= next_out_t:
            dt = next_out_t - t
            landing = True
        if dt <= 0:
            dt = 1e-300
        u = _nl(u, pending + 0.5 * dt, p)
        u = lin(u, dt)
        pending = 0.5 * dt
        t += dt
        steps += 1
        s_acc += dt / lam_est(u) ** 2 if q0 is not None else 0.0
        due = landing
        if config.output_ds is not None and s_acc >= config.output_ds:
            due = True
        if stop.max_steps is not None and steps >= stop.max_steps:
            due = True
        if not due and stop.lambda_floor is not None and lam_est(u) <= stop.lambda_floor:
            due = True
        if not due and stop.wall_clock is not None and steps % 64 == 0:
            due = _time.perf_counter() - start_wall > stop.wall_clock
        if due:
            u = _nl(u, pending, p)
            pending = 0.0
            if not np.all(np.isfinite(u)):
                raise ResolutionError(f"non-finite field at t={t}")
            s_acc = 0.0
            if config.output_dt and t >= next_out_t - 1e-15:
                next_out_t += config.output_dt
            row, reason = checkpoint(u, t)
            if reason is None:
                reason = check(row)
    if pending:
        u = _nl(u, pending, p)
    final = Field(grid, u, t)
    obs = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return Trajectory(checkpoints, obs, reason, steps, final)


# ---------------------------------------------------------------------------
# closed-form solutions and symmetries
# ---------------------------------------------------------------------------
def reference_solution(kind: str, grid: Grid, t: float, params: dict | None = None,
                       ground: GroundStateProfile | None = None) -> Field:
    """Sample a closed-form solution.

    kind : ``soliton``
        ``λ^{-d/2} Q((x − x0)/λ) e^{i(t/λ² + θ)}``; params ``lam``, ``x0``, ``theta``.
    kind : ``pseudoconformal_S``
        ``|t|^{-d/2} Q(x/t) e^{i|x|²/(4t) − i/t}`` for ``t < 0``.
    kind : ``plane_wave``
        ``A e^{i(k·x + (|A|^{4/d} − |k|²) t)}``; params ``amplitude``, ``k``.
    """
    params = dict(params or {})
    d = grid.dimension
    if kind == "plane_wave":
        amp = params.get("amplitude", 1.0)
        k = np.atleast_1d(params.get("k", np.zeros(d))).astype(float)
        phase = sum(ki * xi for ki, xi in zip(k, grid.mesh))
        omega = abs(amp) ** nonlinear_power(d) - float(k @ k)
        return Field(grid, amp * np.exp(1j * (phase + omega * t)), t)
    if ground is None:
        raise ConfigError(f"{kind} needs the ground state")
    if kind == "soliton":
        lam = params.get("lam", 1.0)
        x0 = params.get("x0", np.zeros(d))
        theta = params.get("theta", 0.0)
        r = grid.radius(x0)
        vals = lam ** (-0.5 * d) * ground(r / lam) * np.exp(1j * (t / lam**2 + theta))
        return Field(grid, vals.astype(complex), t)
    if kind == "pseudoconformal_S":
        if not t < 0:
            raise ConfigError("S(t, x) is sampled for t < 0")
        r = grid.radius()
        vals = abs(t) ** (-0.5 * d) * ground(r / t) * np.exp(1j * r * r / (4.0 * t) - 1j / t)
        return Field(grid, vals, t)
    raise ConfigError(f"unknown reference solution {kind!r}")


def spectral_interpolate(values: np.ndarray, grid: Grid, coords: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate the trigonometric interpolant at tensor-product coordinates.

    ``coords`` holds one 1-D array of new coordinates per axis; the result
    has shape ``tuple(len(c) for c in coords)``.  Periodic wrapping applies.
    """
    out = np.asarray(values, complex)
    for axis, (xc, n, length) in enumerate(zip(coords, grid.n_points, grid.box_length)):
        k = 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)
        fh = np.fft.fft(out, axis=axis) / n
        if n % 2 == 0:
            nyq = [slice(None)] * out.ndim
            nyq[axis] = n // 2
            fh[tuple(nyq)] = 0.0
        x0 = -0.5 * length
        E = np.exp(1j * np.outer(np.asarray(xc) - x0, k))
        out = np.moveaxis(np.tensordot(E, np.moveaxis(fh, axis, 0), axes=(1, 0)), 0, axis)
    return out


def apply_symmetry(field: Field, kind: str, params: dict | None = None) -> Field:
    """Apply one symmetry of the equation to a field at time ``t``.

    kind : ``translate`` (``x0``), ``phase`` (``theta``), ``galilean`` (``beta``),
    ``scaling`` (``lam``; new time ``t/λ²``) or ``pseudoconformal`` (new time ``1/t``).
    """
    params = dict(params or {})
    grid = field.grid
    d = grid.dimension
    u = field.values
    t = field.time
    if kind == "phase":
        return field.with_values(u * np.exp(1j * params.get("theta", 0.0)))
    if kind == "translate":
        x0 = np.atleast_1d(params.get("x0", np.zeros(d))).astype(float)
        return field.with_values(_shift(u, grid, x0))
    if kind == "galilean":
        beta = np.atleast_1d(params.get("beta", np.zeros(d))).astype(float)
        shifted = _shift(u, grid, beta * t)
        phase = sum(0.5 * bi * (xi - 0.5 * bi * t) for bi, xi in zip(beta, grid.mesh))
        return field.with_values(shifted * np.exp(1j * phase))
    if kind == "scaling":
        lam = float(params.get("lam", 1.0))
        if lam == 1.0:
            return field.with_values(u.copy())
        vals = lam ** (0.5 * d) * spectral_interpolate(u, grid, [lam * a for a in grid.axes])
        return Field(grid, vals, t / lam**2, field.meta)
    if kind == "pseudoconformal":
        if t == 0:
            raise ConfigError("pseudoconformal transform needs t != 0")
        r = grid.radius()
        vals = abs(t) ** (0.5 * d) * np.conj(spectral_interpolate(u, grid, [t * a for a in grid.axes]))
        vals = vals * np.exp(1j * t * r * r / 4.0)
        return Field(grid, vals, 1.0 / t, field.meta)
    raise ConfigError(f"unknown symmetry {kind!r}")


def _shift(u: np.ndarray, grid: Grid, x0: np.ndarray) -> np.ndarray:
    """``u(x − x0)`` through a Fourier phase."""
    phase = sum(k * xi for k, xi in zip(grid.wavenumbers, x0))
    return grid.ifft(grid.fft(u) * np.exp(-1j * phase))


# ---------------------------------------------------------------------------
# rescaled frame
# ---------------------------------------------------------------------------
@dataclass
class RescaledConfig:
    """Settings of the rescaled-frame run.

    Attributes
    ----------
    ds : float
        Lawson RK4 step in ``s``.
    output_ds : float
        Spacing of modulation fits (and trace samples) in ``s``.
    lambda_drop : float
        Stop once ``λ(s)/λ(s_0) ≤ 1/lambda_drop`` (the λ-floor proxy).
    s_max : float
        Safety bound on the rescaled time span.
    gain : float
        Feedback rate pulling the fitted bubble back to the frame.
    sponge_start, sponge_end : float
        Fractions of the half box where absorption ramps up.
    sponge_strength : float
    decompose_tol : float
    filter_order : int
        Order of the exponential filter ``e^{−36(|k|/k_max)^p}`` applied
        after each step (0 disables it); it damps the Nyquist-band
        instability of the explicit drift term.
    wall_clock : float, optional
    keep_every : int
        Keep every n-th fitted field in the trajectory (0 keeps none).
    """

    ds: float = 2e-3
    output_ds: float = 0.05
    lambda_drop: float = 1e6
    s_max: float = 200.0
    gain: float = 1.0
    sponge_start: float = 0.7
    sponge_end: float = 0.95
    sponge_strength: float = 5.0
    decompose_tol: float = 1e-10
    filter_order: int = 36
    wall_clock: float | None = None
    keep_every: int = 0


@dataclass
class RescaledTrajectory:
    trace: dict[str, np.ndarray]
    fields: list[Field]
    stop_reason: str
    final: Field
    log_lambda0: float


def _rescaled_rhs(v, grid, a, c, g, power, drift_weight, sponge, disp):
    vh = grid.fft(v)
    grads = [grid.ifft(1j * k * vh) for k in grid.wavenumbers]
    lam_v = 0.5 * grid.dimension * v + sum(y * gk for y, gk in zip(disp, grads))
    adv = sum(ci * gk for ci, gk in zip(c, grads))
    nl = 1j * np.abs(v) ** power * v
    return nl + drift_weight * (a * lam_v + adv) + 1j * g * v - sponge * v


def evolve_rescaled_frame(
    initial: Field,
    profiles,
    b0: float,
    log_lambda0: float,
    config: RescaledConfig | None = None,
    x0: Sequence[float] | None = None,
    gamma0: float = 0.0,
) -> RescaledTrajectory:
    """Evolve one bubble in the dynamically rescaled frame.

    Parameters
    ----------
    initial : Field
        ``v(s_0, y)`` on the fixed ``y`` grid (the rescaled data, e.g. ``Q̃_{b0}``).
    profiles : ProfileFamily
    b0 : float
        Initial guess for ``b``; also fixes ``s_0 = e^{3π/(4b₀)}``.
    log_lambda0 : float
        ``ln λ`` of the physical scale at ``s_0`` (log form, so deep windows
        are representable).

    Returns
    -------
    RescaledTrajectory
        ``trace`` holds ``s, s_rel, t_scaled, t, log_lambda_rel, log_lambda, b,
        gamma, mu, orth_residual, grad_sq, exp_weighted, eps_l2_sq, mass, x_k``.
        ``t_scaled = t/λ_0²`` is the elapsed physical time in units of the
        initial scale (``t`` itself underflows for deep windows) and
        ``log_lambda_rel = ln(λ/λ_0)``.

    Raises
    ------
    RegimeError
        If the modulation fit fails or ``b`` leaves ``(0, 0.5]``.
    """
    from .modulation import BubbleParams, decompose, weighted_error_norm, log_s0
    from .modulation import orthogonality_residuals

    cfg = config or RescaledConfig()
    grid = initial.grid
    d = grid.dimension
    power = nonlinear_power(d)
    half = 0.5 * min(grid.box_length)
    rad = grid.radius()
    drift_weight = plateau(rad, cfg.sponge_start * half, cfg.sponge_end * half)
    sponge = cfg.sponge_strength * (1.0 - plateau(rad, cfg.sponge_start * half, cfg.sponge_end * half))
    disp = grid.displacement()
    E_half = np.exp(-1j * grid.k2 * 0.5 * cfg.ds)
    E_full = E_half * E_half
    filt = None
    if cfg.filter_order:
        kn = np.sqrt(grid.k2) / grid.kmax
        filt = np.exp(-36.0 * kn ** cfg.filter_order)

    ls0 = log_s0(b0)
    s0 = math.exp(ls0) if ls0 < 700 else math.inf
    # ``ell = ln(λ_f/λ_0)`` keeps full precision even when ``|ln λ_0|`` is huge
    ell_f = 0.0
    x_f = np.zeros(d) if x0 is None else np.asarray(x0, float)
    gamma_f = float(gamma0)
    s_rel = 0.0
    t_scaled = 0.0
    v = initial.values.astype(complex, copy=True)
    start_wall = _time.perf_counter()

    rows: list[dict] = []
    fields: list[Field] = []
    guess = BubbleParams(b0, 1.0, tuple(np.zeros(d)), 0.0)
    jac = None
    reason = None
    n_out = 0
    ds = cfg.ds
    n_sub = max(1, int(round(cfg.output_ds / ds)))

    while True:
        fv = Field(grid, v, s_rel)
        try:
            params, eps, info = decompose(fv, guess, profiles, tol=cfg.decompose_tol,
                                          jacobian=jac, return_info=True)
        except Exception as exc:  # noqa: BLE001 - any fit failure ends the regime
            if not rows:
                raise RegimeError(f"modulation fit failed at s={s_rel:.4f}: {exc}") from exc
            log.warning("modulation fit failed at s=%.4f: %s", s_rel, exc)
            reason = "fit_failed"
            break
        jac = info.jacobian
        mu = params.lam
        dx = np.asarray(params.x_center)
        dgam = params.gamma
        ell = ell_f + math.log(mu)
        wn = weighted_error_norm(eps)
        orth = orthogonality_residuals(eps, profiles(params.b))
        row = {
            "s": s0 + s_rel,
            "s_rel": s_rel,
            "t_scaled": t_scaled,
            "t": t_scaled * math.exp(2.0 * log_lambda0) if log_lambda0 > -350 else 0.0,
            "log_lambda_rel": ell,
            "log_lambda": log_lambda0 + ell,
            "b": params.b,
            "gamma": gamma_f + dgam,
            "mu": mu,
            "orth_residual": float(np.max(np.abs(orth))),
            "grad_sq": wn["grad_sq"],
            "exp_weighted": wn["exp_weighted"],
            "eps_l2_sq": wn["l2_sq"],
            "mass": float(grid.integrate(np.abs(v) ** 2).real),
        }
        for k in range(d):
            row[f"x_{k}"] = float(x_f[k] + _scaled(log_lambda0 + ell_f) * dx[k])
        rows.append(row)
        if cfg.keep_every and n_out % cfg.keep_every == 0:
            fields.append(Field(grid, v.copy(), s_rel, {"log_lambda_frame": log_lambda0 + ell_f}))
        n_out += 1
        if not 0 < params.b <= 0.5:
            reason = "left_regime"
            break
        if ell <= -math.log(cfg.lambda_drop):
            reason = "lambda_floor"
            break
        if s_rel >= cfg.s_max:
            reason = "s_max"
            break
        if cfg.wall_clock is not None and _time.perf_counter() - start_wall > cfg.wall_clock:
            reason = "wall_clock"
            break
        # frame velocities: leading order law plus relaxation to the fit
        k = cfg.gain
        a = -params.b + k * math.log(mu)
        c = k * dx
        g = -1.0 + k * dgam
        for _ in range(n_sub):
            v = _lawson_rk4(v, grid, ds, E_half, E_full, a, c, g, power, drift_weight, sponge, disp, filt)
            # exact ∫ e^{2ℓ} ds over the step for linear ℓ
            t_scaled += math.exp(2.0 * ell_f) * ds * _expm1_ratio(2.0 * a * ds)
            ell_f += a * ds
            x_f = x_f + _scaled(log_lambda0 + ell_f) * c * ds
            gamma_f += g * ds
            s_rel += ds
        if not np.all(np.isfinite(v)):
            log.warning("non-finite rescaled field at s=%.4f", s_rel)
            reason = "resolution"
            break
        span = ds * n_sub
        guess = BubbleParams(params.b, mu * math.exp((-params.b - a) * span),
                             tuple(dx - c * span), dgam - (1.0 + g) * span)
    trace = {key: np.array([r[key] for r in rows]) for key in rows[0]}
    return RescaledTrajectory(trace, fields, reason, Field(grid, v, s_rel), float(log_lambda0))


def _scaled(log_value: float) -> float:
    return math.exp(log_value) if log_value > -700 else 0.0


def _expm1_ratio(z: float) -> float:
    """``(e^z − 1)/z`` with the removable singularity at 0."""
    return math.expm1(z) / z if z != 0 else 1.0


def _lawson_rk4(v, grid, h, E_half, E_full, a, c, g, power, w, sponge, disp, filt=None):
    """One integrating-factor RK4 step (Laplacian exact in Fourier space)."""
    def N(z):
        return grid.fft(_rescaled_rhs(z, grid, a, c, g, power, w, sponge, disp))

    vh = grid.fft(v)
    k1 = N(v)
    y2 = E_half * (vh + 0.5 * h * k1)
    k2 = N(grid.ifft(y2))
    y3 = E_half * vh + 0.5 * h * k2
    k3 = N(grid.ifft(y3))
    y4 = E_full * vh + h * E_half * k3
    k4 = N(grid.ifft(y4))
    out = E_full * vh + (h / 6.0) * (E_full * k1 + 2.0 * E_half * (k2 + k3) + k4)
    if filt is not None:
        out *= filt
    return grid.ifft(out)
