"""Report-only diagnostics: blow-up rate fits, bootstrap monitors, virial and
Lyapunov series, exterior regularity, LWP partitions and harmonic-analysis
bookkeeping.

Every function is a pure function of stored traces or fields.  Checks are
returned as :class:`Check` records ``{ref, lhs, rhs, pass, margin}`` where
``margin = rhs − lhs`` for ``lhs ≤ rhs`` checks (log-space when flagged).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, ConvergenceError
from .grid import Field, Grid, plateau, smoothstep
from .groundstate import functionals, radial_integral
from .modulation import EpsilonField, log_s0
from .multibubble import BubbleTrace
from .profiles import ProfileFamily, Radiation

__all__ = [
    "Check",
    "CheckReport",
    "BlowupFit",
    "fit_blowup_time",
    "bootstrap_report",
    "scale_integrals",
    "VirialSeries",
    "virial_lyapunov_monitor",
    "lyapunov_functional",
    "f1_tilde",
    "radiation_gamma",
    "ExteriorMonitor",
    "exterior_regularity",
    "LWPPartition",
    "lwp_partition",
    "dn_multiplier",
    "dn_apply",
    "dn_sandwich",
    "analysis_exponents",
    "gain_bound",
    "variance_identity",
]


# ---------------------------------------------------------------------------
# check records
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Check:
    """One monitored inequality ``lhs ≤ rhs`` (or ``≥`` with ``sense='ge'``)."""

    name: str
    ref: str
    lhs: float
    rhs: float
    passed: bool
    margin: float
    bubble: int = -1
    log_space: bool = False

    @classmethod
    def le(cls, name, ref, lhs, rhs, bubble=-1, log_space=False, strict=False) -> "Check":
        ok = lhs < rhs if strict else lhs <= rhs
        return cls(name, ref, float(lhs), float(rhs), bool(ok), float(rhs - lhs), bubble, log_space)

    @classmethod
    def ge(cls, name, ref, lhs, rhs, bubble=-1, log_space=False, strict=False) -> "Check":
        ok = lhs > rhs if strict else lhs >= rhs
        return cls(name, ref, float(lhs), float(rhs), bool(ok), float(lhs - rhs), bubble, log_space)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        for k in ("lhs", "rhs", "margin"):
            v = d[k]
            if not math.isfinite(v):
                d[k] = "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
        return d


@dataclass
class CheckReport:
    checks: list[Check] = dc_field(default_factory=list)
    extra: dict = dc_field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def by_name(self, name: str) -> list[Check]:
        return [c for c in self.checks if c.name == name]

    def to_dict(self) -> dict:
        return {"pass": self.passed, "checks": [c.as_dict() for c in self.checks],
                "extra": _jsonable(self.extra)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# blow-up time fit
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BlowupFit:
    """Linear fit of ``λ²ln|lnλ|`` against ``t``.

    Times are in units ``e^{time_unit_log}``; ``slope_over_2pi`` is unit free
    because ``λ²`` is measured in the same units.
    """

    T_pred: float
    slope: float
    slope_over_2pi: float
    fit_window: tuple[float, float]
    r_squared: float
    n_points: int
    window_slopes: tuple[float, ...]
    slope_drift: float
    constant: bool

    def as_dict(self) -> dict:
        return _jsonable(asdict(self))


def _linfit(x, y):
    # centring keeps the normal equations well conditioned when x clusters near T
    xm = float(np.mean(x))
    A = np.column_stack([x - xm, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1] - coef[0] * xm), r2


def fit_blowup_time(t: Sequence[float], log_lam: Sequence[float], time_unit_log: float = 0.0,
                    decade: float = 10.0, drift_tol: float = 0.05) -> BlowupFit:
    """Fit ``y = λ²ln|lnλ| = slope·t + c`` on the last resolved decade of ``λ``.

    ``T_pred = −c/slope``; the negated slope is compared with ``2π``.  The
    window is split in three index blocks whose slopes measure drift;
    ``constant`` is set when the drift stays below ``drift_tol``.

    Raises
    ------
    ConvergenceError
        If ``λ`` dropped by less than 4× (fit window empty).
    """
    t = np.asarray(t, float)
    ll = np.asarray(log_lam, float)
    if t.shape != ll.shape or t.size < 6:
        raise ConvergenceError("need at least six samples for a blow-up fit")
    if np.max(ll) - ll[-1] < math.log(4.0):
        raise ConvergenceError("insufficient focusing: λ dropped by less than 4×")
    if np.any(ll >= 0):
        raise ConfigError("λ must stay below 1 for ln|lnλ|")
    y = np.exp(2.0 * ll - time_unit_log) * np.log(np.abs(ll))
    sel = ll <= ll[-1] + math.log(decade)
    if np.count_nonzero(sel) < 6:
        sel = np.ones_like(ll, bool)
    idx = np.nonzero(sel)[0]
    idx = idx[idx >= idx[0]]
    tw, yw = t[idx], y[idx]
    slope, icpt, r2 = _linfit(tw, yw)
    slopes = []
    for block in np.array_split(np.arange(len(tw)), 3):
        if len(block) >= 2:
            slopes.append(_linfit(tw[block], yw[block])[0])
    mean = abs(np.mean(slopes)) if slopes else abs(slope)
    drift = float((max(slopes) - min(slopes)) / mean) if slopes and mean > 0 else math.inf
    T_pred = -icpt / slope if slope != 0 else math.inf
    return BlowupFit(
        T_pred=float(T_pred), slope=slope, slope_over_2pi=float(-slope / (2.0 * math.pi)),
        fit_window=(float(tw[0]), float(tw[-1])), r_squared=r2, n_points=int(len(tw)),
        window_slopes=tuple(float(s) for s in slopes), slope_drift=drift,
        constant=bool(drift < drift_tol),
    )


# ---------------------------------------------------------------------------
# bootstrap hypotheses
# ---------------------------------------------------------------------------
def _running_ratio(lam: np.ndarray) -> float:
    """``max_{t₂ > t₁} λ(t₂)/λ(t₁)``."""
    run_min = np.minimum.accumulate(lam)
    return float(np.max(lam[1:] / run_min[:-1])) if len(lam) > 1 else 1.0


def scale_integrals(t: np.ndarray, log_lam: np.ndarray, time_unit_log: float = 0.0) -> dict:
    """``∫λ^{−1.5}dt`` and ``∫λ^{−2.5}dt·λ(T)^{0.5}/|lnλ(T)|^{101}`` by the trapezoid rule.

    Both are returned as natural logs in physical units.
    """
    t = np.asarray(t, float)
    ll = np.asarray(log_lam, float)
    # integrate in units where λ and t are rescaled by the time unit
    half = 0.5 * time_unit_log
    rel = ll - half

    def log_int(power):
        f = np.exp(-power * rel)
        val = float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(t)))
        return math.log(val) + time_unit_log - power * half if val > 0 else -math.inf

    l15 = log_int(1.5)
    l25 = log_int(2.5)
    rhs_log = l25 + 0.5 * ll[-1] - 101.0 * math.log(abs(ll[-1]))
    return {"log_int_lambda_m1_5": l15, "log_int_lambda_m2_5": l25, "log_scaled_2_5": rhs_log}


def bootstrap_report(
    traces: Sequence[BubbleTrace],
    alpha: float = 0.6,
    exterior: dict | None = None,
    lambda0: Sequence[float] | None = None,
    x0: Sequence[Sequence[float]] | None = None,
    relaxed: bool = True,
) -> CheckReport:
    """Evaluate the bootstrap hypotheses (and their improved forms) on traces.

    Parameters
    ----------
    traces : sequence of BubbleTrace
        Synchronised per-bubble traces.
    exterior : dict, optional
        ``{"norm": array}`` of exterior ``H^{N₁}`` norms per sample.
    lambda0, x0 : optional
        Initial scales and centres; default to the first trace sample.
    relaxed : bool
        Also evaluate the log-log windows with single exponentials.
    """
    rep = CheckReport()
    sq = math.sqrt(alpha)
    for j, tr in enumerate(traces):
        b = np.asarray(tr.b)
        ll = np.asarray(tr.log_lam)
        rep.checks.append(Check.ge("b_positive", "bootstrap sign", float(np.min(b)), 0.0, j, strict=True))
        h1 = np.sqrt(np.asarray(tr.eps_l2_sq) + np.asarray(tr.grad_sq))
        bh = float(np.nanmax(b + h1))
        rep.checks.append(Check.le("b_plus_eps_h1", "bootstrap hypothesis 10√α", bh, 10 * sq, j))
        rep.checks.append(Check.le("b_plus_eps_h1_improved", "bootstrap estimate 5√α", bh, 5 * sq, j))
        # log-log windows, log(-ln λ) against c·π/b
        lnl = np.log(-ll)
        for name, c_lo, c_hi in (("loglog_window", 10.0, 0.1), ("loglog_window_improved", 5.0, 0.2)):
            up = float(np.min(c_lo * math.pi / b - lnl))
            lo = float(np.min(lnl - c_hi * math.pi / b))
            rep.checks.append(Check.ge(name + "_lower", "e^{-e^{cπ/b}} ≤ λ", up, 0.0, j, log_space=True))
            rep.checks.append(Check.ge(name + "_upper", "λ ≤ e^{-e^{π/(cb)}}", lo, 0.0, j, log_space=True))
        if relaxed:
            up = float(np.min(10 * math.pi / b + ll))
            lo = float(np.min(-ll - 0.1 * math.pi / b))
            rep.checks.append(Check.ge("loglog_window_relaxed_lower", "e^{-cπ/b} ≤ λ", up, 0.0, j, log_space=True))
            rep.checks.append(Check.ge("loglog_window_relaxed_upper", "λ ≤ e^{-π/(cb)}", lo, 0.0, j, log_space=True))
        s = np.asarray(tr.s, float)
        ln_s = np.log(s) if np.all(np.isfinite(s)) else np.full_like(b, log_s0(float(b[0])))
        ratio = b * ln_s / math.pi
        rep.checks.append(Check.ge("b_lns_lower", "π/(10 ln s) ≤ b", float(np.min(ratio)), 0.1, j))
        rep.checks.append(Check.le("b_lns_upper", "b ≤ 10π/ln s", float(np.max(ratio)), 10.0, j))
        rep.checks.append(Check.ge("b_lns_improved_lower", "π/(5 ln s) ≤ b", float(np.min(ratio)), 0.2, j))
        rep.checks.append(Check.le("b_lns_improved_upper", "b ≤ 5π/ln s", float(np.max(ratio)), 5.0, j))
        with np.errstate(divide="ignore"):
            werr = np.log(np.asarray(tr.grad_sq) + np.asarray(tr.exp_weighted))
        lg = -math.pi / b
        rep.checks.append(Check.ge("local_error", "weighted error ≤ Γ^{3/4}",
                                   float(np.min(0.75 * lg - werr)), 0.0, j, log_space=True))
        rep.checks.append(Check.ge("local_error_improved", "weighted error ≤ Γ^{4/5}",
                                   float(np.min(0.8 * lg - werr)), 0.0, j, log_space=True))
        lam = np.exp(ll - ll[0])
        mono = _running_ratio(lam)
        rep.checks.append(Check.le("almost_monotone", "λ(t₂) ≤ 3λ(t₁)", mono, 3.0, j))
        rep.checks.append(Check.le("almost_monotone_improved", "λ(t₂) ≤ 2λ(t₁)", mono, 2.0, j))
        xs = np.asarray(tr.x)
        ref = np.asarray(x0[j]) if x0 is not None else xs[0]
        drift = float(np.max(np.linalg.norm(xs - ref, axis=1)))
        rep.checks.append(Check.le("translation", "|x − x₀| ≤ 1/1000", drift, 1e-3, j))
        rep.checks.append(Check.le("translation_improved", "|x − x₀| ≤ 1/2000", drift, 5e-4, j))
        e = np.asarray(tr.e_loc)
        if np.all(np.isfinite(e)):
            rep.checks.append(Check.le("local_energy", "|E_loc − E_loc(0)| ≤ 1000",
                                       float(np.max(np.abs(e - e[0]))), 1000.0, j))
            p = np.asarray(tr.p_loc)
            rep.checks.append(Check.le("local_momentum", "|P_loc − P_loc(0)| ≤ 1000",
                                       float(np.max(np.linalg.norm(p - p[0], axis=1))), 1000.0, j))
        if np.all(np.isfinite(tr.t)) and len(tr.t) > 2:
            si = scale_integrals(tr.t, ll, tr.time_unit_log)
            rep.checks.append(Check.le("scale_integral_2_5", "∫λ^{-2.5}·λ(T)^{1/2}/|lnλ(T)|^{101} ≤ 1",
                                       si["log_scaled_2_5"], 0.0, j, log_space=True))
            rep.extra[f"scale_integrals_{j}"] = si
    if exterior is not None:
        lam0 = lambda0 if lambda0 is not None else [math.exp(tr.log_lam[0]) for tr in traces]
        bound = 1.0 / max(lam0)
        rep.checks.append(Check.le("exterior_h_n1", "exterior H^{N₁} ≤ 1/max λ_j0",
                                   float(np.max(exterior["norm"])), bound))
    return rep


# ---------------------------------------------------------------------------
# local virial and Lyapunov functional
# ---------------------------------------------------------------------------
def radiation_gamma(rad: Radiation, fraction: float = 0.8) -> float:
    """Radiated flux ``r^d|ζ_b|²`` read off at ``fraction`` of the radiation grid."""
    r = rad.radial_grid
    i = int(fraction * (len(r) - 1))
    return float(r[i] ** rad.dimension * abs(rad.zeta[i]) ** 2)


def _uniform_resample(s: np.ndarray, f: np.ndarray, h: float | None = None):
    s = np.asarray(s, float)
    f = np.asarray(f, float)
    if h is None:
        h = float(np.median(np.diff(s)))
    steps = np.diff(s)
    if np.allclose(steps, h, rtol=1e-9, atol=0):
        return s, f, h
    grid = s[0] + h * np.arange(int((s[-1] - s[0]) / h) + 1)
    return grid, CubicSpline(s, f)(grid), h


def _d1_fourth(f: np.ndarray, h: float) -> np.ndarray:
    """4th-order centred first derivative; NaN on the two end points each side."""
    out = np.full_like(f, np.nan)
    out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12.0 * h)
    return out


def _noise_sigma(f: np.ndarray) -> float:
    """White-noise level from the 4th difference (robust MAD estimate)."""
    d4 = np.diff(f, 4)
    if d4.size == 0:
        return 0.0
    mad = float(np.median(np.abs(d4 - np.median(d4))))
    return 1.4826 * mad / math.sqrt(70.0)


def f1_tilde(b: float, profiles: ProfileFamily, radiation: Callable[[float], Radiation] | None = None) -> float:
    """``(b/4)‖yQ̃_b‖² + ½ Im∫ y·∇ζ̃ ζ̃̄``; the radiation part is dropped without ``radiation``."""
    prof = profiles(b)
    r = prof.radial_grid
    q2 = prof.sigma**2 + prof.theta**2
    val = 0.25 * b * prof.integrate(r * r * q2)
    if radiation is not None:
        rad = radiation(b)
        z = rad.zeta_cut
        rr = rad.radial_grid
        dz = np.gradient(z, rr)
        val += 0.5 * radial_integral(rr, np.imag(rr * dz * np.conj(z)), rad.dimension)
    return float(val)


def _f1_integral(b: float, profiles: ProfileFamily, radiation, n: int = 12, b_min: float = 0.05) -> float:
    """``∫₀^b f̃₁(v)dv``: Gauss-Legendre on ``[b_min, b]`` and ``v‖yQ‖²/4`` below ``b_min``."""
    g = profiles.ground
    r = g.radial_grid
    yq2 = radial_integral(r, r * r * g.values**2, g.dimension)
    lo = min(b_min, b)
    total = 0.125 * lo * lo * yq2
    if b > lo:
        x, w = np.polynomial.legendre.leggauss(n)
        v = 0.5 * (b - lo) * x + 0.5 * (b + lo)
        total += 0.5 * (b - lo) * sum(wi * f1_tilde(float(vi), profiles, radiation) for vi, wi in zip(v, w))
    return float(total)


def lyapunov_functional(eps: EpsilonField | None, b: float, profiles: ProfileFamily,
                        radiation: Callable[[float], Radiation] | None = None,
                        delta1: float = 0.1) -> dict:
    """Assemble ``J`` term by term (``ε = 0`` when ``eps`` is None).

    Returns a dict with ``J`` and each term; ``truncated`` flags missing radiation.
    """
    prof = profiles(b)
    ground = profiles.ground
    mass_q = radial_integral(ground.radial_grid, ground.values**2, ground.dimension)
    excess = prof.mass() - mass_q
    t_sigma = t_out = t_zeta = 0.0
    if eps is not None:
        y = eps.y_coordinates()
        r = np.sqrt(sum(c * c for c in y))
        e = eps.values
        q, _, _ = prof.evaluate(r)
        t_sigma = 2.0 * float(np.real(eps.integrate_y(e * np.conj(q))))
        A = prof.geometry.A_b
        phi_a = plateau(r, A, 2.0 * A) if math.isfinite(A) else np.ones_like(r)
        t_out = float(np.real(eps.integrate_y((1.0 - phi_a) * np.abs(e) ** 2)))
        if radiation is not None:
            rad = radiation(b)
            z, dz = rad.evaluate_cut(r)
            lz = 0.5 * eps.grid.dimension * z + r * dz
            t_zeta = -b * float(np.imag(eps.integrate_y(np.conj(e) * lz)))
    f1 = f1_tilde(b, profiles, radiation)
    f1_int = _f1_integral(b, profiles, radiation)
    bracket = b * f1 - f1_int + t_zeta
    J = excess + t_sigma + t_out - (delta1 / 800.0) * bracket
    return {"J": J, "mass_excess": excess, "sigma_theta": t_sigma, "outer_mass": t_out,
            "f1": f1, "f1_integral": f1_int, "zeta_pairing": t_zeta,
            "truncated": radiation is None}


@dataclass
class VirialSeries:
    s: np.ndarray
    b: np.ndarray
    b_s: np.ndarray
    threshold: np.ndarray
    threshold_rad: np.ndarray | None
    sigma_b: float
    sigma_bs: float
    violations: int
    violations_rad: int | None
    J: np.ndarray | None = None
    dJ_ds: np.ndarray | None = None
    J_over_b2: np.ndarray | None = None
    J_fluctuation: float | None = None
    lyapunov_violations: int | None = None
    report: CheckReport = dc_field(default_factory=CheckReport)


def virial_lyapunov_monitor(
    trace: BubbleTrace,
    profiles: ProfileFamily | None = None,
    eps: Sequence[tuple[int, EpsilonField]] | None = None,
    radiation: Callable[[float], Radiation] | None = None,
    c_eta: float = 0.2,
    n_sigma: float = 3.0,
    delta1: float = 0.1,
    c_lyap: float = 1.0,
    gamma_rad: Callable[[float], float] | None = None,
) -> VirialSeries:
    """``b_s`` against ``−Γ^{1−Cη}`` and, with ``eps``, the functional ``J``.

    ``b`` is resampled on a uniform ``s`` grid and differentiated with a
    4th-order centred stencil.  A violation requires
    ``b_s < −threshold − n_sigma·σ_{b_s}`` with ``σ_{b_s} = 0.95 σ_b/h``.

    Raises
    ------
    ConvergenceError
        When the noise floor exceeds the typical ``|b_s|`` signal.
    """
    s_all = np.asarray(trace.s, float)
    if not np.all(np.isfinite(s_all)):
        raise ConfigError("trace has no finite rescaled time")
    s, b, h = _uniform_resample(s_all - s_all[0], np.asarray(trace.b))
    b_s = _d1_fourth(b, h)
    sigma_b = _noise_sigma(b)
    sigma_bs = math.sqrt(130.0) / 12.0 * sigma_b / h
    inner = np.isfinite(b_s)
    # the trend, not the noisy derivative itself, measures the signal
    signal = abs(float(np.polyfit(s, b, 1)[0])) if len(s) > 1 else 0.0
    if sigma_bs > 0 and sigma_bs > 10.0 * signal:
        raise ConvergenceError("differentiation noise exceeds signal; sample more densely")
    thr = np.exp(-(1.0 - c_eta) * math.pi / np.abs(b))
    viol = int(np.count_nonzero(b_s[inner] < -thr[inner] - n_sigma * sigma_bs))
    rep = CheckReport()
    rep.checks.append(Check.le("virial_violations", "b_s ≥ −Γ^{1−Cη}", viol, 0))
    thr_rad = None
    viol_rad = None
    if gamma_rad is not None:
        thr_rad = np.array([gamma_rad(float(v)) ** (1.0 - c_eta) for v in b])
        viol_rad = int(np.count_nonzero(b_s[inner] < -thr_rad[inner] - n_sigma * sigma_bs))
        rep.checks.append(Check.le("virial_violations_radiation", "b_s ≥ −Γ_rad^{1−Cη}", viol_rad, 0))
    out = VirialSeries(s + s_all[0], b, b_s, thr, thr_rad, sigma_b, sigma_bs, viol, viol_rad, report=rep)
    if eps is not None:
        if profiles is None:
            raise ConfigError("profiles are required for J")
        idx = np.array([i for i, _ in eps])
        Js = np.array([lyapunov_functional(e, float(trace.b[i]), profiles, radiation, delta1)["J"]
                       for i, e in eps])
        bj = np.asarray(trace.b)[idx]
        sj = s_all[idx]
        out.J = Js
        out.J_over_b2 = Js / bj**2
        if len(Js) >= 5:
            ss, jj, hh = _uniform_resample(sj - sj[0], Js)
            dj = _d1_fourth(jj, hh)
            bb = np.interp(ss, sj - sj[0], bj)
            sig = math.sqrt(130.0) / 12.0 * _noise_sigma(jj) / hh
            lim = -c_lyap * bb * np.exp(-math.pi / bb)
            ok = np.isfinite(dj)
            out.dJ_ds = dj
            out.lyapunov_violations = int(np.count_nonzero(dj[ok] > lim[ok] + n_sigma * sig))
            rep.checks.append(Check.le("lyapunov_violations", "dJ/ds ≤ −C b Γ", out.lyapunov_violations, 0))
        ll = np.asarray(trace.log_lam)[idx]
        last = ll <= ll[-1] + math.log(10.0)
        ratio = out.J_over_b2[last]
        fl = float((ratio.max() - ratio.min()) / abs(ratio.mean())) if ratio.size else math.nan
        out.J_fluctuation = fl
        rep.checks.append(Check.le("J_over_b2_fluctuation", "J/b² ≈ const", fl, 0.25))
    return out


# ---------------------------------------------------------------------------
# exterior regularity
# ---------------------------------------------------------------------------
def exterior_window(grid: Grid, centers: Sequence[Sequence[float]], a0: float, d0: float) -> np.ndarray:
    """C² window: 0 within ``a0`` of any centre, 1 beyond ``d0`` of all centres."""
    w = np.ones(grid.shape)
    for c in centers:
        w *= 1.0 - plateau(grid.radius(c), a0, d0)
    return w


class ExteriorMonitor:
    """Observer recording the exterior ``H^{K₁}`` norm and ``‖∇(χu)‖²`` per checkpoint."""

    def __init__(self, grid: Grid, centers: Sequence[Sequence[float]], a0: float = 1 / 500,
                 d0: float = 1 / 250, K1: float = 1.9, geometry_scale: float = 1.0):
        self.window = exterior_window(grid, centers, a0 * geometry_scale, d0 * geometry_scale)
        self.grid = grid
        self.K1 = K1
        self.t: list[float] = []
        self.norm: list[float] = []
        self.grad_sq: list[float] = []
        self.grad_total: list[float] = []

    def __call__(self, field: Field, row: dict | None = None):
        v = self.window * field.values
        self.t.append(float(field.time))
        self.norm.append(self.grid.sobolev_norm(v, self.K1))
        self.grad_sq.append(self.grid.grad_norm_sq(v))
        self.grad_total.append(self.grid.grad_norm_sq(field.values))
        return None

    def series(self) -> dict:
        t = np.array(self.t)
        g = np.array(self.grad_sq)
        flux = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(t))])
        norm = np.array(self.norm)
        grad = np.sqrt(np.array(self.grad_total))
        return {
            "t": t, "norm": norm, "grad_sq": g, "flux": flux,
            "growth": float(norm.max() / norm[0]) if norm[0] > 0 else math.inf,
            "grad_growth": float(grad.max() / grad[0]) if grad[0] > 0 else math.inf,
        }


def exterior_regularity(fields: Iterable[Field], centers: Sequence[Sequence[float]],
                        a0: float = 1 / 500, d0: float = 1 / 250, K1: float = 1.9,
                        geometry_scale: float = 1.0) -> dict:
    """Exterior ``H^{K₁}`` series and cumulative gradient flux ``∫‖∇(χu)‖²dt``."""
    fields = list(fields)
    if not fields:
        raise ConfigError("no checkpoints")
    mon = ExteriorMonitor(fields[0].grid, centers, a0, d0, K1, geometry_scale)
    for f in fields:
        mon(f)
    return mon.series()


# ---------------------------------------------------------------------------
# LWP partition
# ---------------------------------------------------------------------------
@dataclass
class LWPPartition:
    k: np.ndarray
    t_k: np.ndarray
    gaps: np.ndarray
    bounds: np.ndarray
    pieces: np.ndarray
    sqrt_k_violations: int
    jk_violations: int
    total_pieces: int
    log_cubic_ratio: float

    def as_dict(self) -> dict:
        return _jsonable(asdict(self))


def lwp_partition(t: Sequence[float], log_lam: Sequence[float], delta1: float = 0.1,
                  time_unit_log: float = 0.0) -> LWPPartition:
    """Dyadic times ``t_k`` (``λ(t_k) = 2^{−k}``) and their ``(δ₁/4)λ²`` subdivision.

    Checks ``t_{k+1} − t_k ≤ √k λ(t_k)²`` and ``J_k ≤ 10k²``; compares
    ``Σ J_k`` with ``|lnλ(T)|³``.  With ``time_unit_log`` both sides are
    measured in the unit ``e^{time_unit_log}``, whose square root also
    rescales ``λ``.

    Raises
    ------
    ConfigError
        If ``λ`` is not strictly decreasing.
    """
    t = np.asarray(t, float)
    ll = np.asarray(log_lam, float)
    if np.any(np.diff(ll) >= 0):
        raise ConfigError("λ trace must be strictly decreasing")
    log2 = math.log(2.0)
    k_first = max(1, math.ceil(-ll[0] / log2))
    k_last = math.floor(-ll[-1] / log2)
    ks = np.arange(k_first, k_last + 1)
    if ks.size < 2:
        raise ConfigError("trace spans fewer than two dyadic levels")
    # interpolate t as a function of ln λ (reverse for increasing abscissa)
    t_k = np.interp(-ks * log2, ll[::-1], t[::-1])
    half = 0.5 * time_unit_log
    lam_rel_sq = np.exp(2.0 * (-ks * log2 - half))
    gaps = np.diff(t_k)
    bounds = np.sqrt(ks[:-1].astype(float)) * lam_rel_sq[:-1]
    piece_len = 0.25 * delta1 * lam_rel_sq[1:]
    pieces = np.ceil(gaps / piece_len - 1e-12).astype(int)
    viol = int(np.count_nonzero(gaps > bounds * (1 + 1e-12)))
    jk = int(np.count_nonzero(pieces > 10 * ks[:-1].astype(float) ** 2))
    total = int(pieces.sum())
    ratio = total / abs(ll[-1]) ** 3
    return LWPPartition(ks, t_k, gaps, bounds, pieces, viol, jk, total, float(ratio))


# ---------------------------------------------------------------------------
# upside-down I-operator
# ---------------------------------------------------------------------------
def dn_multiplier(xi: np.ndarray, K2: float) -> np.ndarray:
    """``M(ξ)``: 1 for ``|ξ| ≤ 1``, ``|ξ|^{K₂}`` for ``|ξ| ≥ 2``, log-smoothstep bridge."""
    a = np.abs(xi)
    s = smoothstep((a - 1.0) / 1.0)
    with np.errstate(divide="ignore"):
        la = np.where(a > 0, np.log(np.maximum(a, 1e-300)), 0.0)
    return np.exp(np.where(a <= 1.0, 0.0, s * K2 * la))


def dn_apply(f: np.ndarray, grid: Grid, N: float, K2: float) -> np.ndarray:
    xi = np.sqrt(grid.k2) / N
    return grid.ifft(dn_multiplier(xi, K2) * grid.fft(f))


def dn_sandwich(field: Field, N: float, K2: float) -> dict:
    """``‖D_N f‖₂``, ``‖f‖_{H^{K₂}}`` and the ratios ``C₁ = ‖D_N f‖/‖f‖_{H^{K₂}}``,
    ``C₂ = ‖f‖_{H^{K₂}}/(N^{K₂}‖D_N f‖)``."""
    if not N > 0:
        raise ConfigError("N must be positive")
    grid = field.grid
    dn = dn_apply(field.values, grid, N, K2)
    dn_norm = math.sqrt(float(grid.integrate(np.abs(dn) ** 2).real))
    hk = grid.sobolev_norm(field.values, K2)
    c1 = dn_norm / hk if hk > 0 else math.nan
    c2 = hk / (N**K2 * dn_norm) if dn_norm > 0 else math.nan
    return {"dn_norm": dn_norm, "hk2_norm": hk, "ratio_upper": c1, "ratio_lower": c2}


# ---------------------------------------------------------------------------
# exponent bookkeeping
# ---------------------------------------------------------------------------
def gain_bound(r: float, K2: float) -> float:
    """``r̃_sup = 2(K₂ − r)/K₂ − 1 + r``."""
    return 2.0 * (K2 - r) / K2 - 1.0 + r


def analysis_exponents(q: float, K2: float, r: float, nu: float = 0.5, h_gap: float = 1e-4) -> dict:
    """Strichartz bookkeeping (``d = 2``) for the two technical lemmas and the gain step.

    Raises
    ------
    ConfigError
        If ``q ≤ 2``, ``r ∉ (0, K₂)`` or ``ν ∉ (0, 1)``.
    """
    if not q > 2:
        raise ConfigError("q must exceed 2")
    if not 0 < r < K2:
        raise ConfigError("need 0 < r < K2")
    if not 0 < nu < 1:
        raise ConfigError("need 0 < nu < 1")
    r_pair = 2.0 * q / (q - 2.0)
    qd = q / (q - 1.0)
    rd = r_pair / (r_pair - 1.0)
    inv_p = 1.0 / rd - 0.5
    p0 = 1.0 / inv_p
    h0 = 1.0 - inv_p
    tech1 = {
        "q": q, "r_pair": r_pair, "admissible": 2.0 / q + 2.0 / r_pair,
        "q_dual": qd, "r_dual": rd, "p": p0, "h": h0,
        "h_ok": (1.0 - h_gap) < h0 < 1.0, "q_dual_ok": qd <= 2.0,
        "pair_admissible": 2.0 / (2.0 * qd) + 2.0 / (2.0 * p0),
    }
    g1 = 2.0 / (1.0 - nu)
    g1t = 2.0 / nu
    p1 = p0
    h1 = 1.0 - 2.0 / p1
    w1 = 1.0 / (1.0 / qd - 0.5)
    tech2 = {
        "g": g1, "g_tilde": g1t, "p": p1, "h": h1, "w": w1,
        "h_ok": (1.0 - h_gap) < h1 < 1.0, "w_ok": w1 <= 4.0,
        "pair_admissible": 2.0 / w1 + 2.0 / p1,
    }
    seq = [r]
    for _ in range(200):
        nxt = gain_bound(seq[-1], K2)
        seq.append(nxt)
        if abs(nxt - seq[-2]) < 1e-12:
            break
    gain = {
        "r": r, "r_tilde_sup": gain_bound(r, K2), "fixed_point": K2 / 2.0,
        "fixed_point_residual": gain_bound(K2 / 2.0, K2) - K2 / 2.0,
        "iterates": seq[:10], "limit": seq[-1],
    }
    return {"tech1": tech1, "tech2": tech2, "gain": gain}


# ---------------------------------------------------------------------------
# classical virial identity
# ---------------------------------------------------------------------------
def variance_identity(fields: Sequence[Field], energy0: float | None = None,
                      edge_fraction: float = 0.4, edge_tol: float = 1e-10) -> dict:
    """``V(t) = ∫|x|²|u|²`` and its second difference against ``16E₀``.

    Uses three or more checkpoints equally spaced in time.  Samples whose
    mass beyond ``edge_fraction·L`` exceeds ``edge_tol`` of the total are
    flagged as wrap-around dominated and excluded.
    """
    if len(fields) < 3:
        raise ConfigError("need at least three checkpoints")
    grid = fields[0].grid
    t = np.array([f.time for f in fields])
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-15):
        raise ConfigError("checkpoints must be equally spaced")
    disp = grid.displacement(np.zeros(grid.dimension))
    r2 = sum(d * d for d in disp)
    edge = np.zeros(grid.shape, bool)
    for d, length in zip(disp, grid.box_length):
        edge |= np.abs(d) > edge_fraction * length
    V = []
    clean = []
    for f in fields:
        dens = np.abs(f.values) ** 2
        V.append(float(grid.integrate(r2 * dens).real))
        total = float(dens.sum())
        clean.append(total == 0 or float(dens[edge].sum()) <= edge_tol * total)
    V = np.array(V)
    if energy0 is None:
        energy0 = functionals(fields[0]).energy
    h = float(dt[0])
    d2 = (V[2:] - 2 * V[1:-1] + V[:-2]) / h**2
    ok = np.array(clean)
    valid = ok[2:] & ok[1:-1] & ok[:-2]
    target = 16.0 * energy0
    err = np.abs(d2 - target)
    rel = err / abs(target) if target != 0 else err
    return {"t": t, "V": V, "t_mid": t[1:-1], "second_difference": d2, "target": target,
            "abs_error": err, "rel_error": rel, "valid": valid}
