"""Geometric decomposition of a field into a modulated profile plus error.

A field is written as ``u(x) = λ^{-d/2}(Q̃_b + ε)((x − x_c)/λ) e^{−iγ}``.
The parameters are fixed by the orthogonality of ``ε`` to
``|y|²Q̃_b``, ``y Q̃_b``, ``iΛ²Q̃_b`` and ``iΛQ̃_b`` in the real pairing
``(f, g) = Re∫ f ḡ``.

All pairings are evaluated on the physical grid through the change of
variables ``y = (x − x_c)/λ`` (the cell volume becomes ``dx^d / λ^d``), so a
field built from the profile on the same grid reproduces its parameters
exactly and no resampling is ever needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError
from .grid import Field, Grid, plateau
from .groundstate import nonlinear_power
from .profiles import ModifiedProfile, ProfileFamily

__all__ = [
    "BubbleParams",
    "EpsilonField",
    "LocalObservables",
    "orthogonality_residuals",
    "decompose",
    "initial_guess",
    "place_profile",
    "localize_bubble",
    "local_observables",
    "rescaled_time",
    "log_s0",
    "weighted_error_norm",
    "chi0_loc",
    "chi1_loc",
]


@dataclass(frozen=True)
class BubbleParams:
    """Modulation parameters of one bubble.

    ``lam`` stands for λ (``lambda`` is reserved in Python).
    """

    b: float
    lam: float
    x_center: tuple[float, ...]
    gamma: float
    s: float = 0.0

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        object.__setattr__(self, "x_center", tuple(float(v) for v in np.atleast_1d(self.x_center)))

    @property
    def dimension(self) -> int:
        return len(self.x_center)

    def vector(self) -> np.ndarray:
        return np.array([self.b, self.lam, *self.x_center, self.gamma])

    @classmethod
    def from_vector(cls, v: Sequence[float], s: float = 0.0) -> "BubbleParams":
        v = np.asarray(v, float)
        return cls(float(v[0]), float(v[1]), tuple(v[2:-1]), float(v[-1]), s)

    def in_regime(self) -> bool:
        """``b > 0`` and ``ln λ`` inside the log-log window, checked in log space."""
        if not self.b > 0:
            return False
        ln_lam = math.log(self.lam)
        lo = -math.exp(2.0 * math.pi / self.b) if 2.0 * math.pi / self.b < 700 else -math.inf
        hi = -math.exp(0.5 * math.pi / self.b)
        return lo < ln_lam < hi


@dataclass(frozen=True, eq=False)
class EpsilonField:
    """Error field ``ε`` attached to a bubble.

    ``values_x`` holds ``ε_x(x) = u(x) − λ^{-d/2}Q̃_b((x−x_c)/λ)e^{−iγ}`` on
    the physical grid; the rescaled samples are
    ``ε(y_j) = λ^{d/2} e^{iγ} ε_x(x_j)`` at ``y_j = (x_j − x_c)/λ``.
    """

    grid: Grid
    values_x: np.ndarray
    params: BubbleParams
    window: str = "none"

    @property
    def lam(self) -> float:
        return self.params.lam

    def y_coordinates(self) -> tuple[np.ndarray, ...]:
        return tuple(dx / self.lam for dx in self.grid.displacement(self.params.x_center))

    @property
    def values(self) -> np.ndarray:
        d = self.grid.dimension
        return self.lam ** (0.5 * d) * np.exp(1j * self.params.gamma) * self.values_x

    @property
    def y_volume(self) -> float:
        return self.grid.cell_volume / self.lam**self.grid.dimension

    def integrate_y(self, f: np.ndarray) -> complex:
        return f.sum() * self.y_volume


@dataclass(frozen=True)
class _Support:
    """Grid points inside the profile support, with their rescaled radii."""

    index: tuple
    y: tuple
    r: np.ndarray
    dv: float


def _support(grid: Grid, params: BubbleParams, radius: float) -> _Support:
    disp = grid.displacement(params.x_center)
    lam = params.lam
    if grid.dimension == 1:
        x = disp[0]
        reach = lam * radius
        idx = np.nonzero(np.abs(x) < reach)
        y = (x[idx] / lam,)
    else:
        r2 = disp[0] ** 2 + disp[1] ** 2
        idx = np.nonzero(r2 < (lam * radius) ** 2)
        y = tuple(dx[idx] / lam for dx in disp)
    r = np.sqrt(sum(c * c for c in y))
    return _Support(idx, y, r, grid.cell_volume / lam**grid.dimension)


def _directions(profile: ModifiedProfile, sup: _Support) -> tuple[np.ndarray, list[np.ndarray]]:
    """``Q̃`` and the derivative-free directions ``|y|²Q̃`` and ``y_i Q̃``."""
    dirs = profile.directions(sup.r)
    q = dirs["Q"]
    h = [dirs["r2Q"]]
    h += [yi * q for yi in sup.y]
    return q, h


def _lambda_about(f: np.ndarray, grid: Grid, center: Sequence[float], reach: float) -> np.ndarray:
    """``Λf`` about ``center``; the displacement is smoothly switched off beyond ``reach``.

    Exact on ``|x − c| ≤ 1.25·reach``; the window only keeps the periodic
    wrap of the displacement away from the spectral derivative.
    """
    disp = grid.displacement(center)
    r = np.sqrt(sum(dx * dx for dx in disp))
    w = plateau(r, 1.25 * reach, 2.0 * reach)
    out = 0.5 * grid.dimension * f
    for dx, g in zip(disp, grid.gradient(f)):
        out = out + w * dx * g
    return out


def _pairings(eps_x: np.ndarray, grid: Grid, params: BubbleParams,
              profile: ModifiedProfile, sup: _Support | None = None) -> np.ndarray:
    """Orthogonality pairings of ``ε`` given on the physical grid.

    The ``iΛQ̃`` and ``iΛ²Q̃`` pairings are moved onto ``ε`` by the
    antisymmetry ``(Λf, g) = −(f, Λg)``, so only ``Q̃`` itself is sampled
    across the narrow cutoff annulus.
    """
    if sup is None:
        sup = _support(grid, params, profile.support_radius)
    q, h = _directions(profile, sup)
    fac = params.lam ** (0.5 * grid.dimension) * np.exp(1j * params.gamma)
    reach = params.lam * profile.support_radius
    l1 = _lambda_about(eps_x, grid, params.x_center, reach)
    l2 = _lambda_about(l1, grid, params.x_center, reach)
    idx = sup.index
    eps = fac * eps_x[idx]
    iq = 1j * q
    res = [np.real(np.sum(eps * np.conj(hk))) for hk in h]
    res.append(np.real(np.sum(fac * l2[idx] * np.conj(iq))))
    res.append(-np.real(np.sum(fac * l1[idx] * np.conj(iq))))
    return np.array(res) * sup.dv


def _residual_vector(u: np.ndarray, grid: Grid, params: BubbleParams,
                     profile: ModifiedProfile) -> tuple[np.ndarray, _Support]:
    sup = _support(grid, params, profile.support_radius)
    q, _, _ = profile.evaluate(sup.r)
    eps_x = u.copy()
    eps_x[sup.index] -= params.lam ** (-0.5 * grid.dimension) * np.exp(-1j * params.gamma) * q
    return _pairings(eps_x, grid, params, profile, sup), sup


def orthogonality_residuals(eps: EpsilonField, profile: ModifiedProfile) -> np.ndarray:
    """Pairings of ``ε`` with ``|y|²Q̃, yQ̃, iΛ²Q̃, iΛQ̃`` (``3 + d`` numbers)."""
    return _pairings(eps.values_x, eps.grid, eps.params, profile)


def place_profile(grid: Grid, profile: ModifiedProfile, params: BubbleParams) -> np.ndarray:
    """``λ^{-d/2} Q̃_b((x − x_c)/λ) e^{−iγ}`` sampled on ``grid``."""
    out = np.zeros(grid.shape, complex)
    sup = _support(grid, params, profile.support_radius)
    q, _, _ = profile.evaluate(sup.r)
    out[sup.index] = params.lam ** (-0.5 * grid.dimension) * np.exp(-1j * params.gamma) * q
    return out


def _as_array(u: Field | np.ndarray) -> np.ndarray:
    return u.values if isinstance(u, Field) else u


def initial_guess(u: Field, q0: float, b: float = 0.0,
                  center: Sequence[float] | None = None, radius: float | None = None) -> BubbleParams:
    """Basin-reaching guess: centre at ``argmax|u|``, λ from the peak height.

    ``λ = (Q(0)/|u(x_c)|)^{2/d}`` and ``γ = −arg u(x_c)``.  When ``center``
    is given only points within ``radius`` of it are searched.
    """
    grid = field_grid(u)
    a = np.abs(_as_array(u))
    if center is not None:
        mask = grid.radius(center) <= (radius if radius is not None else 1.0)
        a = np.where(mask, a, 0.0)
    k = np.unravel_index(int(np.argmax(a)), a.shape)
    x = tuple(float(ax[k]) for ax in grid.mesh) if grid.dimension == 2 else (float(grid.axes[0][k[0]]),)
    peak = float(a[k])
    if peak <= 0:
        raise ConvergenceError("field vanishes; no bubble to decompose")
    lam = (q0 / peak) ** (2.0 / grid.dimension)
    gamma = -float(np.angle(_as_array(u)[k]))
    return BubbleParams(b, lam, x, gamma)


def field_grid(u: Field | np.ndarray) -> Grid:
    if isinstance(u, Field):
        return u.grid
    raise ConfigError("a Field is required")


def _fd_steps(v: np.ndarray) -> np.ndarray:
    lam = v[1]
    steps = np.empty_like(v)
    steps[0] = 1e-6 * max(abs(v[0]), 1e-2)
    if abs(v[0] + steps[0]) > 0.5:
        steps[0] = -steps[0]
    steps[1] = 1e-6 * lam
    steps[2:-1] = 1e-6 * lam
    steps[-1] = 1e-6
    return steps


@dataclass
class DecomposeInfo:
    iterations: int
    residual: float
    jacobian: np.ndarray | None = dc_field(default=None, repr=False)


def decompose(
    u: Field,
    guess: BubbleParams,
    profiles: ProfileFamily,
    window: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 50,
    jacobian: np.ndarray | None = None,
    return_info: bool = False,
):
    """Fit ``(b, λ, x_c, γ)`` so that ``ε`` satisfies the orthogonality conditions.

    Parameters
    ----------
    u : Field
        Field to decompose (physical or rescaled frame).
    guess : BubbleParams
        Starting point; must lie in the basin of the fixed point.
    profiles : ProfileFamily
        Source of ``Q̃_b`` for arbitrary ``b``.
    window : ndarray, optional
        Multiplicative window applied to ``u`` first (multi-bubble fields).
    tol : float
        Convergence when ``max|residual| ≤ tol·‖u‖₂``.
    jacobian : ndarray, optional
        Reused Jacobian (chord iterations); refreshed when progress stalls.

    Returns
    -------
    params : BubbleParams
    eps : EpsilonField
    info : DecomposeInfo
        Only with ``return_info``.

    Raises
    ------
    ConvergenceError
        No convergence within ``max_iter`` Newton steps, or singular Jacobian.
    """
    grid = u.grid
    vals = u.values if window is None else u.values * window
    norm = math.sqrt(float(grid.integrate(np.abs(vals) ** 2).real))
    if norm == 0.0:
        raise ConvergenceError("cannot decompose the zero field")
    target = tol * norm

    def resid(v):
        p = BubbleParams.from_vector(v, guess.s)
        return _residual_vector(vals, grid, p, profiles(p.b))[0]

    def jac(v, r0):
        steps = _fd_steps(v)
        J = np.empty((len(r0), len(v)))
        for k in range(len(v)):
            vk = v.copy()
            vk[k] += steps[k]
            J[:, k] = (resid(vk) - r0) / steps[k]
        return J

    v = guess.vector()
    v[0] = float(np.clip(v[0], -0.5, 0.5))
    r = resid(v)
    J = jacobian
    fresh = False
    it = 0
    while np.max(np.abs(r)) > target:
        if it >= max_iter:
            raise ConvergenceError(
                f"decompose did not converge in {max_iter} iterations (residual {np.max(np.abs(r)):.3e})"
            )
        if J is None:
            J = jac(v, r)
            fresh = True
        try:
            delta = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular decomposition Jacobian") from exc
        if not np.all(np.isfinite(delta)):
            raise ConvergenceError("non-finite Newton step")
        step = 1.0
        accepted = False
        old = np.max(np.abs(r))
        for _ in range(12):
            vn = v + step * delta
            if vn[1] > 0 and abs(vn[0]) <= 0.5:
                rn = resid(vn)
                if np.max(np.abs(rn)) < old:
                    accepted = True
                    break
            step *= 0.5
        it += 1
        if not accepted:
            if fresh:
                raise ConvergenceError("Newton line search failed")
            J = None
            continue
        progress = np.max(np.abs(rn)) / old
        v, r = vn, rn
        if progress > 0.25 and not fresh:
            J = None
        fresh = False
    params = BubbleParams.from_vector(v, guess.s)
    prof = profiles(params.b)
    eps_x = vals - place_profile(grid, prof, params)
    eps = EpsilonField(grid, eps_x, params, "none" if window is None else "chi1_loc")
    if return_info:
        return params, eps, DecomposeInfo(it, float(np.max(np.abs(r))), J)
    return params, eps


# localisation -----------------------------------------------------------------
def chi0_loc(r: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """``χ_{0,loc}``: 1 on ``r ≤ 3/4``, 0 on ``r ≥ 1`` (radii times ``scale``)."""
    return plateau(r, 0.75 * scale, 1.0 * scale)


def chi1_loc(r: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """``χ_{1,loc}``: 1 on ``r ≤ 2/3``, 0 on ``r ≥ 3/4`` (radii times ``scale``)."""
    return plateau(r, (2.0 / 3.0) * scale, 0.75 * scale)


def localize_bubble(
    u: Field,
    center: Sequence[float],
    others: Sequence[Sequence[float]] = (),
    profiles: ProfileFamily | None = None,
    params: BubbleParams | None = None,
    scale: float = 1.0,
) -> tuple[Field, EpsilonField | None]:
    """Window ``u`` with ``χ_{1,loc}(x − center)``; optionally return its ``ε``.

    Raises
    ------
    ConfigError
        If the window would overlap that of another centre.
    """
    c = np.asarray(center, float)
    for o in others:
        if np.linalg.norm(c - np.asarray(o, float)) < 1.5 * scale:
            raise ConfigError("bubble windows overlap")
    w = chi1_loc(u.grid.radius(c), scale)
    windowed = u.with_values(u.values * w)
    eps = None
    if profiles is not None and params is not None:
        prof = profiles(params.b)
        eps = EpsilonField(u.grid, windowed.values - place_profile(u.grid, prof, params),
                           params, "chi1_loc")
    return windowed, eps


@dataclass(frozen=True)
class LocalObservables:
    energy: float
    momentum: tuple[float, ...]
    mass: float


def local_observables(u: Field, center: Sequence[float], scale: float = 1.0) -> LocalObservables:
    """``E_loc``, ``P_loc`` and local mass with the ``χ_{0,loc}`` weight."""
    grid = u.grid
    w = chi0_loc(grid.radius(center), scale)
    vals = u.values
    p = nonlinear_power(grid.dimension)
    grads = grid.gradient(vals)
    dens = 0.5 * sum(np.abs(g) ** 2 for g in grads) - np.abs(vals) ** (2.0 + p) / (2.0 + p)
    e = float(grid.integrate(w * dens).real)
    mom = tuple(float(np.imag(grid.integrate(w * g * np.conj(vals)))) for g in grads)
    mass = float(grid.integrate(w * np.abs(vals) ** 2).real)
    return LocalObservables(e, mom, mass)


def log_s0(b0: float) -> float:
    """``ln s₀`` with ``s₀ = e^{3π/(4 b₀)}``."""
    return 3.0 * math.pi / (4.0 * b0)


def rescaled_time(t: np.ndarray, lam: np.ndarray, b0: float) -> np.ndarray:
    """``s(t) = s₀ + ∫₀^t dτ/λ²`` by the trapezoid rule (``inf`` if ``s₀`` overflows)."""
    t = np.asarray(t, float)
    lam = np.asarray(lam, float)
    if np.any(lam <= 0):
        raise ConfigError("lambda trace must be positive")
    ls0 = log_s0(b0)
    s0 = math.exp(ls0) if ls0 < 700 else math.inf
    inc = 0.5 * (1.0 / lam[1:] ** 2 + 1.0 / lam[:-1] ** 2) * np.diff(t)
    return s0 + np.concatenate([[0.0], np.cumsum(inc)])


def weighted_error_norm(eps: EpsilonField) -> dict:
    """``∫|∇ε|²``, ``∫|ε|²e^{−|y|}`` and their sum, with natural logs; also ``∫|ε|²``."""
    grid = eps.grid
    lam = eps.lam
    grad_sq = lam**2 * grid.grad_norm_sq(eps.values_x)
    r = grid.radius(eps.params.x_center)
    dens = np.abs(eps.values_x) ** 2
    expw = float(grid.integrate(dens * np.exp(-r / lam)).real)
    l2_sq = float(grid.integrate(dens).real)
    total = grad_sq + expw

    def _log(v):
        return math.log(v) if v > 0 else -math.inf

    return {
        "grad_sq": grad_sq,
        "exp_weighted": expw,
        "sum": total,
        "l2_sq": l2_sq,
        "log_grad_sq": _log(grad_sq),
        "log_exp_weighted": _log(expw),
        "log_sum": _log(total),
    }
