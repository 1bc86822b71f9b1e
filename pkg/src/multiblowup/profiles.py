"""Modified self-similar profiles ``Q̃_b``, their residual ``Ψ_b``, ``Γ_b`` and radiation.

``Q_b`` is obtained through the real reduction ``P_b = Q_b e^{ib|y|²/4}``,
which turns the complex profile equation into

    ΔP − P + (b²|y|²/4) P + P^{1+4/d} = 0,   P(R_b) = 0,   P > 0 on [0, R_b).

``P(0)`` is found by bisection.  Where the two bracketing trajectories stop
agreeing, the remaining piece up to ``R_b`` solves the linearised equation
(the nonlinearity is negligible there) and is integrated backwards from
``R_b``, which is the stable direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import solve_banded

from .errors import ConfigError, ResolutionError, ShootingError
from .fd import uniform_derivatives
from .grid import plateau, plateau_derivatives
from .groundstate import (
    GroundStateProfile,
    bisect_shooting,
    lambda2_radial,
    lambda_radial,
    nonlinear_power,
    radial_integral,
    shoot,
)
from .kernels import rk4_radial

__all__ = [
    "ProfileGeometry",
    "ModifiedProfile",
    "GammaB",
    "Radiation",
    "geometry",
    "solve_modified_profile",
    "compute_psi_b",
    "psi_b_product_formula",
    "gamma_b",
    "theta_weight",
    "solve_radiation",
    "profile_family_report",
    "ProfileFamily",
]

DEFAULT_ETA = 0.01
DEFAULT_A_EXPONENT = 0.1
# support radii grow like 2/b; beyond this the radial grid would not fit in memory
MAX_RADIAL_POINTS = 20_000_000


@dataclass(frozen=True)
class ProfileGeometry:
    """Radii of the modified profile and of the radiation cutoff.

    ``R_b = (2/|b|)√(1−η)``, ``R_b⁻ = √(1−η) R_b`` and ``A_b = e^{aπ/|b|}``.
    For ``b = 0`` all radii are infinite.
    """

    b: float
    eta: float
    R_b: float
    R_b_minus: float
    A_b: float
    a_exponent: float

    @property
    def a_dominates(self) -> bool:
        """Whether ``A_b`` exceeds ``1/|b|`` (asymptotically true as b→0)."""
        return self.b == 0 or self.A_b > 1.0 / abs(self.b)


def geometry(b: float, eta: float = DEFAULT_ETA, a_exponent: float = DEFAULT_A_EXPONENT) -> ProfileGeometry:
    if not 0.0 < eta <= 0.1:
        raise ConfigError("eta must lie in (0, 0.1]")
    if not 0.0 < a_exponent < 0.5:
        raise ConfigError("a_exponent must lie in (0, 0.5)")
    if b == 0:
        return ProfileGeometry(0.0, eta, math.inf, math.inf, math.inf, a_exponent)
    sq = math.sqrt(1.0 - eta)
    R = 2.0 / abs(b) * sq
    arg = a_exponent * math.pi / abs(b)
    A = math.exp(arg) if arg < 700 else math.inf
    return ProfileGeometry(float(b), eta, R, sq * R, A, a_exponent)


@dataclass(frozen=True, eq=False)
class ModifiedProfile:
    """Complex radial profile ``Q̃_b = Σ_b + iΘ_b`` on ``[0, R_b]``.

    The radial grid consists of two uniform segments, ``[0, R_b⁻]`` and
    ``[R_b⁻, R_b]`` (``n_inner`` points in the first), so that the cutoff
    kinks fall on nodes.

    Attributes
    ----------
    geometry : ProfileGeometry
    radial_grid : ndarray
    sigma, theta : ndarray
        Real and imaginary parts of ``Q̃_b``.
    cutoff : ndarray
        ``φ_b`` samples.
    psi : ndarray
        ``Ψ_b`` samples (complex), filled by :func:`compute_psi_b`.
    p0 : float
        ``P_b(0)``.
    dimension : int
    """

    geometry: ProfileGeometry
    radial_grid: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray
    cutoff: np.ndarray
    psi: np.ndarray
    p0: float
    dimension: int
    n_inner: int
    _p_spline: CubicHermiteSpline | None = dc_field(default=None, repr=False)
    _ground: GroundStateProfile | None = dc_field(default=None, repr=False)

    @property
    def b(self) -> float:
        return self.geometry.b

    @property
    def values(self) -> np.ndarray:
        return self.sigma + 1j * self.theta

    @property
    def support_radius(self) -> float:
        if self.b == 0:
            return float(self.radial_grid[-1])
        return self.geometry.R_b

    # pointwise evaluation ------------------------------------------------
    def _p_and_derivs(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d = self.dimension
        pw = nonlinear_power(d)
        if self.b == 0:
            g = self._ground
            p = g(r)
            dp = g.radial_derivative(r)
        else:
            p = self._p_spline(r)
            dp = self._p_spline(r, 1)
        c = 0.25 * self.b**2
        with np.errstate(divide="ignore", invalid="ignore"):
            lap_term = np.where(r > 0, (d - 1.0) / np.where(r > 0, r, 1.0) * dp, 0.0)
        d2p = -lap_term + (1.0 - c * r * r) * p - np.abs(p) ** pw * p
        if d == 2:
            # at r = 0, Δp = 2 p'' so p'' = (p - p^{1+p})/2
            at0 = r == 0
            d2p = np.where(at0, 0.5 * (p - np.abs(p) ** pw * p), d2p)
        return p, dp, d2p

    def evaluate(self, r: np.ndarray | float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``Q̃_b``, ``∂_r Q̃_b`` and ``∂_r² Q̃_b`` at radii ``r`` (zero beyond ``R_b``)."""
        r = np.abs(np.asarray(r, dtype=float))
        shape = r.shape
        r = r.ravel()
        f = np.zeros(r.shape, complex)
        f1 = np.zeros(r.shape, complex)
        f2 = np.zeros(r.shape, complex)
        if self.b == 0:
            sel = np.ones(r.shape, bool)
        else:
            sel = r < self.geometry.R_b
        if np.any(sel):
            rs = r[sel]
            p, dp, d2p = self._p_and_derivs(rs)
            beta = 0.25 * self.b
            e = np.exp(-1j * beta * rs * rs)
            q = p * e
            q1 = (dp - 2j * beta * rs * p) * e
            q2 = (d2p - 2j * beta * p - 4j * beta * rs * dp - 4.0 * beta**2 * rs * rs * p) * e
            if self.b == 0:
                phi, dphi, d2phi = 1.0, 0.0, 0.0
            else:
                phi, dphi, d2phi = plateau_derivatives(rs, self.geometry.R_b_minus, self.geometry.R_b)
            f[sel] = phi * q
            f1[sel] = dphi * q + phi * q1
            f2[sel] = d2phi * q + 2.0 * dphi * q1 + phi * q2
        return f.reshape(shape), f1.reshape(shape), f2.reshape(shape)

    def directions(self, r: np.ndarray) -> dict[str, np.ndarray]:
        """``Q̃``, ``ΛQ̃``, ``Λ²Q̃`` and ``|y|²Q̃`` at radii ``r``."""
        r = np.abs(np.asarray(r, dtype=float))
        f, f1, f2 = self.evaluate(r)
        d = self.dimension
        return {
            "Q": f,
            "LQ": lambda_radial(r, f, f1, d),
            "L2Q": lambda2_radial(r, f, f1, f2, d),
            "r2Q": r * r * f,
            "dQ": f1,
        }

    # quadrature ----------------------------------------------------------
    def integrate(self, f: np.ndarray) -> float:
        """``∫_{R^d} f(|y|) dy`` for samples on :attr:`radial_grid`."""
        n1 = self.n_inner
        r = self.radial_grid
        total = radial_integral(r[:n1], f[:n1], self.dimension)
        if len(r) > n1:
            total += radial_integral_offset(r[n1 - 1 :], f[n1 - 1 :], self.dimension)
        return total

    def mass(self) -> float:
        return self.integrate(self.sigma**2 + self.theta**2)

    def to_csv(self, path) -> None:
        data = np.column_stack(
            [self.radial_grid, self.sigma, self.theta, self.cutoff, self.psi.real, self.psi.imag]
        )
        np.savetxt(path, data, delimiter=",", header="r,sigma,theta,phi,re_psi,im_psi",
                   comments="", fmt="%.17g")


def radial_integral_offset(r: np.ndarray, f: np.ndarray, dimension: int) -> float:
    """Radial integral over a segment not starting at the origin."""
    if dimension == 1:
        return float(2.0 * simpson(f, x=r))
    return float(2.0 * np.pi * simpson(f * r, x=r))


def _linear_tail(R: float, r_match: float, n: int, dimension: int, c: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward solution of the linearised equation with ``w(R)=0``, ``w'(R)=-1``."""
    h = (r_match - R) / n
    w = np.empty(n + 1)
    dw = np.empty(n + 1)
    rk4_radial(0.0, -1.0, R, h, n, dimension, c, nonlinear_power(dimension), False, False, w, dw)
    r = R + h * np.arange(n + 1)
    return r[::-1], w[::-1], dw[::-1]


def solve_modified_profile(
    b: float,
    eta: float = DEFAULT_ETA,
    ground: GroundStateProfile | None = None,
    step: float = 1e-3,
    window: float = 0.2,
    n_annulus: int = 256,
    agreement: float = 1e-8,
    a_exponent: float = DEFAULT_A_EXPONENT,
    dimension: int | None = None,
) -> ModifiedProfile:
    """Construct ``Q̃_b = Q_b φ_b`` by shooting on ``P_b(0)``.

    Parameters
    ----------
    b : float
        ``0 ≤ |b| ≤ 0.5``; ``b = 0`` returns the ground state itself.
    eta : float
        Cutoff parameter η.
    ground : GroundStateProfile
        Reference profile; solved on demand from ``dimension`` when omitted.
    step : float
        Target radial step of the shooting grid and the inner segment.
    window : float
        Relative half-width of the initial shooting window around ``Q(0)``.
    n_annulus : int
        Number of intervals in the cutoff annulus ``[R_b⁻, R_b]``.

    Raises
    ------
    ShootingError
        Window exhausted after widening, or a sign change before ``R_b⁻``.
    ResolutionError
        If ``R_b/step`` exceeds ``MAX_RADIAL_POINTS``.
    """
    if ground is None:
        from .groundstate import solve_ground_state

        ground = solve_ground_state(dimension or 1)
    d = ground.dimension
    if abs(b) > 0.5:
        raise ConfigError("|b| must not exceed 0.5")
    geom = geometry(b, eta, a_exponent)
    if b == 0:
        r = ground.radial_grid
        return ModifiedProfile(
            geometry=geom, radial_grid=r, sigma=ground.values.copy(),
            theta=np.zeros_like(r), cutoff=np.ones_like(r), psi=np.zeros(r.shape, complex),
            p0=ground.q0, dimension=d, n_inner=len(r), _ground=ground,
        )

    R, Rm = geom.R_b, geom.R_b_minus
    c = 0.25 * b * b
    n_s = int(math.ceil(R / step))
    if n_s > MAX_RADIAL_POINTS:
        raise ResolutionError(f"b={b} needs {n_s} radial points; use a larger step")
    h = R / n_s

    def too_big(p0):
        _, p, _, status = shoot(p0, h, R, d, c)
        return status == 1

    q0 = ground.q0
    lo, hi = q0 * (1.0 - window), q0 * (1.0 + window)
    for _ in range(4):
        if not too_big(lo) and too_big(hi):
            break
        lo, hi = lo - window * q0, hi + window * q0
        lo = max(lo, 1e-3)
    else:
        raise ShootingError(f"shooting window exhausted for b={b}")
    lo, hi = bisect_shooting(lo, hi, too_big)

    _, p_lo, dp_lo, _ = shoot(lo, h, R, d, c, classify=False)
    _, p_hi, dp_hi, _ = shoot(hi, h, R, d, c, classify=False)
    mean = 0.5 * (p_lo + p_hi)
    dmean = 0.5 * (dp_lo + dp_hi)
    gap = np.abs(p_hi - p_lo)
    bad = np.nonzero(gap > agreement * np.abs(mean))[0]
    m = n_s if bad.size == 0 else max(bad[0] - 1, 1)
    r_s = h * np.arange(n_s + 1)
    P = mean.copy()
    dP = dmean.copy()
    if m < n_s:
        _, w, dw = _linear_tail(R, r_s[m], n_s - m, d, c)
        scale = mean[m] / w[0]
        P[m:] = scale * w
        dP[m:] = scale * dw
    P[-1] = 0.0
    first_neg = np.nonzero(P[:-1] <= 0.0)[0]
    if first_neg.size and r_s[first_neg[0]] <= Rm:
        raise ShootingError(f"P_b changes sign before R_b^- (b={b})")
    spline = CubicHermiteSpline(r_s, P, dP)

    n1 = int(math.ceil(Rm / step))
    n1 += n1 % 2  # even number of intervals for Simpson
    r1 = np.linspace(0.0, Rm, n1 + 1)
    r2 = np.linspace(Rm, R, n_annulus + 1)[1:]
    r = np.concatenate([r1, r2])
    prof = ModifiedProfile(
        geometry=geom, radial_grid=r, sigma=np.zeros_like(r), theta=np.zeros_like(r),
        cutoff=plateau(r, Rm, R), psi=np.zeros(r.shape, complex), p0=float(P[0]),
        dimension=d, n_inner=n1 + 1, _p_spline=spline, _ground=ground,
    )
    q, _, _ = prof.evaluate(r)
    object.__setattr__(prof, "sigma", q.real.copy())
    object.__setattr__(prof, "theta", q.imag.copy())
    compute_psi_b(prof)
    return prof


def compute_psi_b(profile: ModifiedProfile) -> np.ndarray:
    """``Ψ_b = −ΔQ̃ + Q̃ − ibΛQ̃ − |Q̃|^{4/d}Q̃`` by high-order differences.

    Derivatives are taken separately on the two uniform segments so that no
    stencil straddles the cutoff kinks.  The result is stored in
    ``profile.psi`` and returned.
    """
    b, d = profile.b, profile.dimension
    if b == 0:
        profile.psi[:] = 0.0
        return profile.psi
    r = profile.radial_grid
    f = profile.values
    n1 = profile.n_inner
    f1 = np.empty_like(f)
    f2 = np.empty_like(f)
    h1 = r[1] - r[0]
    f1[:n1], f2[:n1] = uniform_derivatives(f[:n1], h1, even_left=True)
    if len(r) > n1:
        seg = f[n1 - 1 :]
        h2 = r[n1] - r[n1 - 1]
        a1, a2 = uniform_derivatives(seg, h2)
        f1[n1:], f2[n1:] = a1[1:], a2[1:]
    psi = _psi_from_derivs(r, f, f1, f2, b, d)
    profile.psi[:] = psi
    return profile.psi


def _psi_from_derivs(r, f, f1, f2, b, d) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        lap = np.where(r > 0, f2 + (d - 1.0) / np.where(r > 0, r, 1.0) * f1, d * f2)
    lam = lambda_radial(r, f, f1, d)
    return -lap + f - 1j * b * lam - np.abs(f) ** nonlinear_power(d) * f


def psi_b_product_formula(profile: ModifiedProfile, r: np.ndarray) -> np.ndarray:
    """``Ψ_b`` from the exact derivatives of ``Q̃_b`` (Hermite-interpolated ``P``).

    Independent of :func:`compute_psi_b`'s differencing; used as a check.
    """
    f, f1, f2 = profile.evaluate(r)
    return _psi_from_derivs(np.abs(np.asarray(r, float)), f, f1, f2, profile.b, profile.dimension)


# Γ_b --------------------------------------------------------------------------
@dataclass(frozen=True)
class GammaB:
    """``Γ_b`` proxy ``e^{−π/|b|}`` with its ``Cη`` sandwich, stored in log form."""

    b: float
    c_eta: float
    log_proxy: float
    log_lower: float
    log_upper: float

    @property
    def proxy(self) -> float:
        return math.exp(self.log_proxy)

    @property
    def lower(self) -> float:
        return math.exp(self.log_lower)

    @property
    def upper(self) -> float:
        return math.exp(self.log_upper)

    def power(self, exponent: float) -> float:
        """``log(Γ^exponent)`` on the proxy."""
        return exponent * self.log_proxy


def gamma_b(b: float, c_eta: float = 0.2) -> GammaB:
    """``Γ_b`` proxy and bounds ``e^{−(1±Cη)π/|b|}``."""
    if not 0 < abs(b) <= 0.5:
        raise ConfigError("gamma_b needs 0 < |b| <= 0.5")
    base = -math.pi / abs(b)
    return GammaB(float(b), c_eta, base, (1.0 + c_eta) * base, (1.0 - c_eta) * base)


def theta_weight(r: np.ndarray | float) -> np.ndarray:
    """``θ(r) = ∫₀^r √(1−z²/4) dz`` for ``r ≤ 2`` and ``(θ(2)/2) r`` beyond."""
    r = np.asarray(r, dtype=float)
    rc = np.clip(r, 0.0, 2.0)
    inner = 0.5 * rc * np.sqrt(1.0 - 0.25 * rc * rc) + np.arcsin(0.5 * rc)
    return np.where(r <= 2.0, inner, 0.25 * np.pi * r)


# radiation --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Radiation:
    """Radial radiation ``ζ_b`` and its cut version ``ζ̃_b = ζ_b χ_A``."""

    b: float
    radial_grid: np.ndarray
    zeta: np.ndarray
    zeta_cut: np.ndarray
    residual: float
    grad_energy: float
    A_b: float
    dimension: int

    def evaluate_cut(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``ζ̃_b`` and ``∂_r ζ̃_b`` at radii ``r`` (linear interpolation)."""
        r = np.abs(np.asarray(r, float))
        zc = np.interp(r, self.radial_grid, self.zeta_cut.real) + 1j * np.interp(
            r, self.radial_grid, self.zeta_cut.imag
        )
        dz = np.gradient(self.zeta_cut, self.radial_grid)
        dzc = np.interp(r, self.radial_grid, dz.real) + 1j * np.interp(r, self.radial_grid, dz.imag)
        return zc, dzc


def _radiation_operator_bands(r, h, b, d):
    """Banded second-order discretisation of ``Δζ − ζ + ibΛζ`` on ``r_j = j h``.

    Row 0 uses the even reflection at the origin; the last row carries the
    Robin condition ``ζ' = −(d/2 + i/b) ζ / r`` of the finite-energy branch.
    """
    n = len(r)
    lower = np.zeros(n, complex)
    diag = np.zeros(n, complex)
    upper = np.zeros(n, complex)
    inv_h2 = 1.0 / (h * h)
    rr = r.copy()
    rr[0] = 1.0
    first = (d - 1.0) / rr + 1j * b * r  # coefficient of ζ'
    diag[:] = -2.0 * inv_h2 - 1.0 + 1j * b * 0.5 * d
    upper[:] = inv_h2 + first / (2.0 * h)
    lower[:] = inv_h2 - first / (2.0 * h)
    # origin: Δζ = d ζ'' with ζ(-h) = ζ(h)
    diag[0] = -2.0 * d * inv_h2 - 1.0 + 1j * b * 0.5 * d
    upper[0] = 2.0 * d * inv_h2
    lower[0] = 0.0
    # outer Robin row: (ζ_N − ζ_{N−1})/h = κ ζ_N, κ at the midpoint
    rm = r[-1] - 0.5 * h
    kappa = -(0.5 * d + 1j / b) / rm
    diag[-1] = 1.0 / h - 0.5 * kappa
    lower[-1] = -1.0 / h - 0.5 * kappa
    upper[-1] = 0.0
    return lower, diag, upper


def _apply_bands(lower, diag, upper, z):
    out = diag * z
    out[:-1] += upper[:-1] * z[1:]
    out[1:] += lower[1:] * z[:-1]
    return out


def solve_radiation(
    b: float,
    profile: ModifiedProfile,
    a_exponent: float | None = None,
    step: float = 5e-3,
    outer_factor: float = 3.0,
    min_outer: float = 20.0,
    max_points: int = 4_000_000,
) -> Radiation:
    """Solve ``Δζ − ζ + ibΛζ = Ψ_b`` for the finite-energy radial solution.

    The grid is uniform from 0 to ``L = max(outer_factor·A_b, min_outer/|b|)``
    and the far field carries the non-oscillating branch
    ``ζ ~ r^{−d/2 − i/b}``, the only one with ``∫|∇ζ|² < ∞``.

    Returns
    -------
    Radiation
        With ``residual`` the relative sup-norm defect of the discrete equation.
    """
    d = profile.dimension
    a = profile.geometry.a_exponent if a_exponent is None else a_exponent
    if b == 0:
        r = profile.radial_grid
        z = np.zeros(r.shape, complex)
        return Radiation(0.0, r, z, z.copy(), 0.0, 0.0, math.inf, d)
    if b != profile.b:
        raise ConfigError("profile was built for a different b")
    A = math.exp(a * math.pi / abs(b))
    L = max(outer_factor * A, min_outer / abs(b))
    n = int(math.ceil(L / step)) + 1
    if n > max_points:
        raise ResolutionError(f"radiation grid would need {n} points")
    r = step * np.arange(n)
    psi = np.zeros(n, complex)
    inside = r < profile.geometry.R_b
    psi[inside] = np.interp(r[inside], profile.radial_grid, profile.psi.real) + 1j * np.interp(
        r[inside], profile.radial_grid, profile.psi.imag
    )
    lower, diag, upper = _radiation_operator_bands(r, step, b, d)
    ab = np.zeros((3, n), complex)
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    rhs = psi.copy()
    rhs[-1] = 0.0
    zeta = solve_banded((1, 1), ab, rhs)
    if not np.all(np.isfinite(zeta)):
        raise ResolutionError("radiation solve produced non-finite values")
    res = _apply_bands(lower, diag, upper, zeta) - rhs
    scale = max(np.max(np.abs(psi)), 1e-300)
    residual = float(np.max(np.abs(res[:-1])) / scale)
    dz = np.diff(zeta) / step
    rmid = r[:-1] + 0.5 * step
    grad_energy = radial_integral_offset(rmid, np.abs(dz) ** 2, d)
    if not np.isfinite(grad_energy):
        raise ResolutionError("radiation energy is not finite")
    chi = plateau(r, A, 2.0 * A)
    return Radiation(float(b), r, zeta, zeta * chi, residual, grad_energy, A, d)


# family report ------------------------------------------------------------------
def profile_family_report(
    b_list, ground: GroundStateProfile, eta: float = DEFAULT_ETA, n_eval: int = 20001
) -> dict:
    """Weighted distance to ``Q`` and Sobolev norms along a list of ``b``.

    The weight is ``e^{(1−η)θ(|b||y|)/|b|}``; Sobolev norms ``H¹, H², H³``
    are computed from radial derivatives of ``|Q̃_b|`` profiles via
    Fourier-free identities on a dense radial grid (``∫|∂^k f|²``).
    """
    from .fd import uniform_derivatives as _ud

    d = ground.dimension
    entries = []
    r_ref = ground.radial_grid
    h = r_ref[1] - r_ref[0]

    def sobolev(vals):
        out = {}
        f = vals
        acc = radial_integral(r_ref, np.abs(f) ** 2, d)
        derivs = [f]
        for k in range(1, 4):
            d1, _ = _ud(derivs[-1], h, even_left=(k % 2 == 1))
            derivs.append(d1)
            acc += radial_integral(r_ref, np.abs(d1) ** 2, d)
            out[f"H{k}"] = math.sqrt(acc)
        return out

    q_norms = sobolev(ground.values.astype(complex))
    for b in b_list:
        prof = solve_modified_profile(b, eta, ground)
        f, _, _ = prof.evaluate(r_ref)
        dist = np.abs(f - ground.values)
        w = np.exp((1.0 - eta) * theta_weight(abs(b) * r_ref) / abs(b))
        entries.append(
            {
                "b": float(b),
                "weighted_distance": float(np.max(w * dist)),
                "mass_excess": prof.mass() - ground.mass(),
                **{k: float(v) for k, v in sobolev(f).items()},
            }
        )
    return {"ground_norms": q_norms, "entries": entries}


class ProfileFamily:
    """Cache of modified profiles keyed by exact ``b``."""

    def __init__(self, ground: GroundStateProfile, eta: float = DEFAULT_ETA,
                 step: float = 2e-3, max_size: int = 64):
        self.ground = ground
        self.eta = eta
        self.step = step
        self.max_size = max_size
        self._cache: dict[float, ModifiedProfile] = {}

    @property
    def dimension(self) -> int:
        return self.ground.dimension

    def __call__(self, b: float) -> ModifiedProfile:
        b = float(b)
        prof = self._cache.get(b)
        if prof is None:
            prof = solve_modified_profile(b, self.eta, self.ground, step=self.step, n_annulus=64)
            if len(self._cache) >= self.max_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[b] = prof
        return prof
