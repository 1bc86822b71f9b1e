"""Ground state of the mass-critical NLS, the scaling generator Λ and basic functionals.

The ground state solves ``Q'' + (d-1)/r Q' - Q + Q^{1+4/d} = 0`` with ``Q > 0``
decaying at infinity.  It is found by shooting on ``Q(0)``: too large a value
makes the trajectory cross zero, too small a value makes it turn upwards.
Bisection converges to the separatrix to machine precision, after which the
two bracketing trajectories are trusted only while they agree; beyond that
point the exact linear far-field behaviour ``r^{-ν} K_ν(r)`` (``ν = d/2 - 1``)
is matched in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline
from scipy.special import kv

from .errors import ResolutionError, ShootingError
from .grid import Field, Grid
from .kernels import rk4_radial

__all__ = [
    "GroundStateProfile",
    "Functionals",
    "solve_ground_state",
    "closed_form_1d",
    "shoot",
    "bisect_shooting",
    "apply_lambda",
    "lambda_radial",
    "lambda2_radial",
    "radial_integral",
    "functionals",
    "pairing",
    "exp_weighted_mass",
    "nonlinear_power",
]


def nonlinear_power(dimension: int) -> float:
    """Exponent ``4/d`` of the mass-critical nonlinearity."""
    return 4.0 / dimension


def closed_form_1d(x: np.ndarray | float) -> np.ndarray:
    """Explicit one-dimensional ground state ``3^{1/4} sech(2x)^{1/2}``."""
    x = np.asarray(x, dtype=float)
    return (3.0 / np.cosh(2.0 * x) ** 2) ** 0.25


def shoot(
    p0: float,
    h: float,
    r_end: float,
    dimension: int,
    c: float = 0.0,
    classify: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Integrate the radial profile equation from ``r=0`` with ``p(0)=p0``.

    Solves ``p'' + (d-1)/r p' - (1 - c r²) p + |p|^{4/d} p = 0`` with a
    series start at ``r=h`` (which avoids the ``(d-1)/r`` division) and
    fixed-step RK4.

    Returns
    -------
    r, p, dp : ndarray
        Samples on ``0, h, 2h, ...`` up to the stopping index.
    status : int
        0 reached ``r_end``; 1 crossed zero; 2 turned upward.
    """
    power = nonlinear_power(dimension)
    nsteps = int(round(r_end / h))
    # p = p0 + A r² + B r⁴ + O(r⁶)
    A = (p0 - p0 ** (1.0 + power)) / (2.0 * dimension)
    B = ((1.0 - (1.0 + power) * p0**power) * A - c * p0) / (4.0 * (dimension + 2.0))
    p1 = p0 + A * h**2 + B * h**4
    dp1 = 2.0 * A * h + 4.0 * B * h**3
    out_p = np.empty(nsteps + 1)
    out_dp = np.empty(nsteps + 1)
    out_p[0], out_dp[0] = p0, 0.0
    n, status = rk4_radial(
        p1, dp1, h, h, nsteps - 1, dimension, c, power, True, classify,
        out_p[1:], out_dp[1:],
    )
    n_tot = n + 1
    r = h * np.arange(n_tot)
    return r, out_p[:n_tot], out_dp[:n_tot], int(status)


def bisect_shooting(
    lo: float,
    hi: float,
    too_big,
    max_iter: int = 200,
) -> tuple[float, float]:
    """Shrink ``[lo, hi]`` until adjacent floats, keeping ``too_big(hi)`` true.

    ``too_big(p0)`` returns True, False, or None (exact hit).
    """
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        verdict = too_big(mid)
        if verdict is None:
            return mid, mid
        if verdict:
            hi = mid
        else:
            lo = mid
    return lo, hi


def _tail_shape(r: np.ndarray, dimension: int) -> tuple[np.ndarray, np.ndarray]:
    """Decaying solution ``g = r^{-ν}K_ν(r)`` of ``Δg = g`` and its derivative."""
    nu = 0.5 * dimension - 1.0
    r = np.asarray(r, dtype=float)
    g = r ** (-nu) * kv(nu, r)
    dg = -(r ** (-nu)) * kv(nu + 1.0, r)
    return g, dg


@dataclass(frozen=True, eq=False)
class GroundStateProfile:
    """Radial samples of the ground state.

    Attributes
    ----------
    dimension : int
    radial_grid, values, derivative : ndarray
        ``r``, ``Q(r)`` and ``Q'(r)`` on a uniform grid starting at 0.
    decay_rate : float
        Log-linear fit of ``-d ln Q / dr`` on the last tenth of the grid.
    q0 : float
        ``Q(0)``.
    tail_amplitude, match_radius : float
        ``Q = tail_amplitude * r^{-ν}K_ν(r)`` for ``r ≥ match_radius``.
    residual : float
        Maximal ODE residual over interior nodes.
    """

    dimension: int
    radial_grid: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    decay_rate: float
    q0: float
    tail_amplitude: float
    match_radius: float
    residual: float

    @property
    def r_max(self) -> float:
        return float(self.radial_grid[-1])

    @property
    def step(self) -> float:
        return float(self.radial_grid[1] - self.radial_grid[0])

    def _spline(self) -> CubicHermiteSpline:
        spl = self.__dict__.get("_spl")
        if spl is None:
            spl = CubicHermiteSpline(self.radial_grid, self.values, self.derivative)
            object.__setattr__(self, "_spl", spl)
        return spl

    def __call__(self, r: np.ndarray | float) -> np.ndarray:
        """Evaluate ``Q(|r|)``; the analytic tail is used beyond the grid."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inside = r <= self.r_max
        out[inside] = self._spline()(r[inside])
        if np.any(~inside):
            out[~inside] = self.tail_amplitude * _tail_shape(r[~inside], self.dimension)[0]
        return out

    def radial_derivative(self, r: np.ndarray | float) -> np.ndarray:
        """Evaluate ``Q'(|r|)``."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inside = r <= self.r_max
        out[inside] = self._spline().derivative()(r[inside])
        if np.any(~inside):
            out[~inside] = self.tail_amplitude * _tail_shape(r[~inside], self.dimension)[1]
        return out

    def mass(self) -> float:
        return radial_integral(self.radial_grid, self.values**2, self.dimension)

    def energy(self) -> float:
        p = nonlinear_power(self.dimension)
        kin = 0.5 * radial_integral(self.radial_grid, self.derivative**2, self.dimension)
        pot = radial_integral(self.radial_grid, self.values ** (2.0 + p), self.dimension) / (2.0 + p)
        return kin - pot

    def lambda_pairing(self) -> float:
        """``(Q, ΛQ)``, zero for the exact ground state."""
        lq = lambda_radial(self.radial_grid, self.values, self.derivative, self.dimension)
        return radial_integral(self.radial_grid, self.values * lq, self.dimension)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.radial_grid, self.values, self.derivative])
        np.savetxt(path, data, delimiter=",", header="r,Q,dQ", comments="", fmt="%.17g")


def radial_integral(r: np.ndarray, f: np.ndarray, dimension: int) -> float:
    """``∫_{R^d} f(|y|) dy`` for radial ``f`` sampled on a uniform grid from 0."""
    if dimension == 1:
        return float(2.0 * simpson(f, x=r))
    return float(2.0 * np.pi * simpson(f * r, x=r))


def lambda_radial(r: np.ndarray, f: np.ndarray, df: np.ndarray, dimension: int) -> np.ndarray:
    """Radial form of ``Λf = (d/2) f + r f'``."""
    return 0.5 * dimension * f + r * df


def lambda2_radial(
    r: np.ndarray, f: np.ndarray, df: np.ndarray, d2f: np.ndarray, dimension: int
) -> np.ndarray:
    """Radial form of ``Λ²f = (d²/4) f + (d+1) r f' + r² f''``."""
    return 0.25 * dimension**2 * f + (dimension + 1.0) * r * df + r * r * d2f


def _ode_residual(r, q, dq, dimension, h) -> np.ndarray:
    """Residual at interior nodes using a 4th-order difference of ``Q'``."""
    p = nonlinear_power(dimension)
    d2q = (-dq[4:] + 8.0 * dq[3:-1] - 8.0 * dq[1:-3] + dq[:-4]) / (12.0 * h)
    rr = r[2:-2]
    res = d2q + (dimension - 1.0) / rr * dq[2:-2] - q[2:-2] + q[2:-2] ** (1.0 + p)
    return res


def solve_ground_state(
    dimension: int = 1,
    r_max: float = 30.0,
    tol: float = 1e-7,
    step: float = 1e-3,
    agreement: float = 1e-8,
) -> GroundStateProfile:
    """Solve the ground-state equation by shooting with bisection on ``Q(0)``.

    Parameters
    ----------
    dimension : {1, 2}
    r_max : float
        Outer radius of the returned grid, at least 20.
    tol : float
        Bound on the interior ODE residual, at most 1e-6.
    step : float
        RK4 step; halved once if the residual check fails.
    agreement : float
        Relative gap between bracketing trajectories up to which the
        integrated solution is trusted.

    Raises
    ------
    ShootingError
        If the initial window does not bracket the separatrix.
    ResolutionError
        If the residual stays above ``tol`` after refinement.
    """
    if dimension not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    if r_max < 20.0:
        raise ValueError("r_max must be at least 20")
    if tol > 1e-6:
        raise ValueError("tol must be at most 1e-6")

    for h in (step, 0.5 * step):
        prof = _solve_once(dimension, r_max, h, agreement)
        if prof.residual <= tol:
            return prof
    raise ResolutionError(
        f"ground-state residual {prof.residual:.3e} exceeds tol {tol:.1e} after refinement"
    )


def _solve_once(dimension: int, r_max: float, h: float, agreement: float) -> GroundStateProfile:
    r_shoot = min(r_max, 40.0)

    def status(q0):
        return shoot(q0, h, r_shoot, dimension)[3]

    lo, hi = 1.0 + 1e-3, 4.0
    while status(hi) != 1:
        hi *= 1.5
        if hi > 50.0:
            raise ShootingError("no overshooting initial height found")
    if status(lo) != 2:
        raise ShootingError("lower shooting height does not undershoot")

    def too_big(q0):
        s = status(q0)
        if s == 0:
            return None
        return s == 1

    lo, hi = bisect_shooting(lo, hi, too_big)
    r_lo, p_lo, dp_lo, _ = shoot(lo, h, r_shoot, dimension)
    r_hi, p_hi, dp_hi, _ = shoot(hi, h, r_shoot, dimension)
    n = min(len(p_lo), len(p_hi))
    mean = 0.5 * (p_lo[:n] + p_hi[:n])
    dmean = 0.5 * (dp_lo[:n] + dp_hi[:n])
    gap = np.abs(p_hi[:n] - p_lo[:n])
    bad = np.nonzero(gap > agreement * np.abs(mean))[0]
    m = (bad[0] - 1) if bad.size else n - 1
    r_match = m * h
    if r_match < 5.0:
        raise ShootingError(f"trajectories separate too early (r={r_match:.2f})")

    n_total = int(round(r_max / h)) + 1
    r = h * np.arange(n_total)
    q = np.empty(n_total)
    dq = np.empty(n_total)
    q[: m + 1] = mean[: m + 1]
    dq[: m + 1] = dmean[: m + 1]
    g_m, _ = _tail_shape(np.array([r_match]), dimension)
    amp = float(mean[m] / g_m[0])
    g, dg = _tail_shape(r[m + 1 :], dimension)
    q[m + 1 :] = amp * g
    dq[m + 1 :] = amp * dg

    res = _ode_residual(r, q, dq, dimension, h)
    sel = r >= 0.9 * r_max
    decay = -np.polyfit(r[sel], np.log(q[sel]), 1)[0]
    return GroundStateProfile(
        dimension=dimension,
        radial_grid=r,
        values=q,
        derivative=dq,
        decay_rate=float(decay),
        q0=float(q[0]),
        tail_amplitude=amp,
        match_radius=float(r_match),
        residual=float(np.max(np.abs(res))),
    )


# grid-level operators ---------------------------------------------------------
def apply_lambda(field: Field | np.ndarray, grid: Grid | None = None,
                 center: Sequence[float] | None = None) -> np.ndarray:
    """``Λf = (d/2) f + (x - c)·∇f`` with a spectral gradient."""
    if isinstance(field, Field):
        grid, values = field.grid, field.values
    else:
        if grid is None:
            raise ValueError("grid required for raw arrays")
        values = field
    grad = grid.gradient(values)
    disp = grid.displacement(center)
    out = 0.5 * grid.dimension * values
    for xi, gi in zip(disp, grad):
        out = out + xi * gi
    return out


def pairing(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    """Real ``L²`` pairing ``(f, g) = Re ∫ f ḡ``."""
    return float(np.real(grid.integrate(f * np.conj(g))))


def exp_weighted_mass(grid: Grid, f: np.ndarray, center: Sequence[float] | None = None,
                      scale: float = 1.0) -> float:
    """``∫|f|² e^{-|x-c|/scale}``."""
    return float(grid.integrate(np.abs(f) ** 2 * np.exp(-grid.radius(center) / scale)).real)


@dataclass(frozen=True)
class Functionals:
    mass: float
    energy: float
    momentum: tuple[float, ...]
    pairings: dict


def functionals(field: Field, pairings: dict | None = None) -> Functionals:
    """Mass, energy, momentum and optional named pairings of a field.

    ``pairings`` maps names to ``(f, g)`` array pairs, or to a single array
    ``f`` for the exponentially weighted mass ``∫|f|² e^{-|y|}``.
    """
    grid, u = field.grid, field.values
    p = nonlinear_power(grid.dimension)
    abs2 = np.abs(u) ** 2
    mass = float(grid.integrate(abs2).real)
    kin = grid.grad_norm_sq(u)
    pot = float(grid.integrate(abs2 ** (1.0 + 0.5 * p)).real)
    energy = 0.5 * kin - pot / (2.0 + p)
    mom = tuple(float(np.imag(grid.integrate(g * np.conj(u)))) for g in grid.gradient(u))
    out = {}
    for name, spec in (pairings or {}).items():
        if isinstance(spec, tuple):
            out[name] = pairing(grid, spec[0], spec[1])
        else:
            out[name] = exp_weighted_mass(grid, spec)
    if not (np.isfinite(mass) and np.isfinite(energy) and all(np.isfinite(mom))):
        raise ResolutionError("non-finite functional values")
    return Functionals(mass, energy, mom, out)
