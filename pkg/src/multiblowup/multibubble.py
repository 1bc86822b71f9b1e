"""Well-prepared multi-bubble initial data, condition reports and tracking.

Thresholds that involve ``Γ_b`` or double exponentials in ``b`` are carried
as natural logarithms.  Every condition is reported twice: against the
exact threshold and against a desk-scale relaxation that replaces double
exponentials by single ones (``e^{-e^{c/b}} → e^{-c/b}``) and ``Γ^{1000}``
by ``Γ^{3}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError, ResolutionError
from .grid import Field, Grid, plateau
from .groundstate import functionals
from .modulation import (
    BubbleParams,
    _pairings,
    _support,
    chi0_loc,
    chi1_loc,
    decompose,
    local_observables,
    log_s0,
    place_profile,
    rescaled_time,
    weighted_error_norm,
)
from .profiles import ProfileFamily

__all__ = [
    "Thresholds",
    "MultiBubbleSpec",
    "ConditionLine",
    "BubbleTrace",
    "Tracker",
    "build_initial_data",
    "validate_well_prepared",
    "project_orthogonal",
    "exterior_sobolev_norm",
    "track",
    "run_multibubble",
    "extract_local",
]


@dataclass(frozen=True)
class Thresholds:
    """Constants of the data conditions.

    Attributes
    ----------
    alpha : float
        Smallness constant; bounds ``b``, ``Σλ + Σ‖ε‖_{H¹}`` and the exterior norm.
    small_exponent : float
        Exponent of ``Γ`` bounding the weighted local error.
    tame_exponent, tame_relaxed_exponent : float
        Exponent of ``Γ`` bounding ``λ²|E_loc|`` and ``λ|P_loc|``, exact and relaxed.
    n1, n2, k1, k2 : float
        Smoothness orders, ``N₁ < N₂/2`` and ``K₁ < K₂/2``.
    exterior_radius : float
        Exterior region ``min_j |x − x_j| ≥ exterior_radius``.
    separation : float
        Minimal pairwise centre distance.
    """

    alpha: float = 0.6
    small_exponent: float = 6.0 / 7.0
    tame_exponent: float = 1000.0
    tame_relaxed_exponent: float = 3.0
    n1: float = 3.0
    n2: float = 8.0
    k1: float = 1.9
    k2: float = 4.0
    exterior_radius: float = 1.0 / 3.0
    separation: float = 10.0

    def __post_init__(self) -> None:
        if not self.n1 < self.n2 / 2:
            raise ConfigError("need N1 < N2/2")
        if not self.k1 < self.k2 / 2:
            raise ConfigError("need K1 < K2/2")


@dataclass
class MultiBubbleSpec:
    """Description of ``m``-bubble initial data.

    Attributes
    ----------
    bubbles : list of BubbleParams
    box_length : float
    n_points : int
        Points per axis of the periodic grid.
    epsilon_seed : dict, optional
        ``{"kind": "gaussian" | "noise", "amplitude": .., "center": [..],
        "width": .., "seed": ..}``; ``None`` means ``ε = 0``.
    energy_correction : bool
        Add an orthogonal correction that cancels each local energy.
    window_scale : float
        Scale of the localisation cutoffs ``χ_{0,loc}``, ``χ_{1,loc}``.
    """

    bubbles: list[BubbleParams]
    box_length: float = 80.0
    n_points: int = 2**18
    epsilon_seed: dict | None = None
    energy_correction: bool = False
    window_scale: float = 1.0
    eta: float = 0.01
    thresholds: Thresholds = dc_field(default_factory=Thresholds)

    def __post_init__(self) -> None:
        if not self.bubbles:
            raise ConfigError("at least one bubble is required")
        d = self.bubbles[0].dimension
        if any(bp.dimension != d for bp in self.bubbles):
            raise ConfigError("all bubbles need the same dimension")
        sep = self.thresholds.separation
        for i, bi in enumerate(self.bubbles):
            for bj in self.bubbles[i + 1:]:
                dist = float(np.linalg.norm(np.subtract(bi.x_center, bj.x_center)))
                if dist < sep:
                    raise ConfigError(f"bubble separation {dist:.3g} below {sep}")
        for bp in self.bubbles:
            if not 0 < bp.b <= 0.5:
                raise ConfigError("each b_j0 must lie in (0, 0.5]")

    @property
    def m(self) -> int:
        return len(self.bubbles)

    @property
    def dimension(self) -> int:
        return self.bubbles[0].dimension

    def grid(self) -> Grid:
        return Grid.cube(self.dimension, self.box_length, self.n_points)

    def to_json(self) -> str:
        doc = {
            "bubbles": [
                {"b": bp.b, "lambda": bp.lam, "x": list(bp.x_center), "gamma": bp.gamma}
                for bp in self.bubbles
            ],
            "box_length": self.box_length,
            "n_points": self.n_points,
            "epsilon_seed": self.epsilon_seed,
            "energy_correction": self.energy_correction,
            "window_scale": self.window_scale,
            "eta": self.eta,
            "thresholds": asdict(self.thresholds),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "MultiBubbleSpec":
        known = {"bubbles", "box_length", "n_points", "epsilon_seed", "energy_correction",
                 "window_scale", "eta", "thresholds"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown keys in bubble spec: {sorted(extra)}")
        bubbles = []
        for entry in doc["bubbles"]:
            unknown = set(entry) - {"b", "lambda", "x", "gamma"}
            if unknown:
                raise ConfigError(f"unknown bubble keys: {sorted(unknown)}")
            bubbles.append(BubbleParams(float(entry["b"]), float(entry["lambda"]),
                                        tuple(np.atleast_1d(entry["x"])), float(entry.get("gamma", 0.0))))
        kw = {k: doc[k] for k in ("box_length", "n_points", "epsilon_seed", "energy_correction",
                                  "window_scale", "eta") if k in doc}
        if "thresholds" in doc:
            kw["thresholds"] = Thresholds(**doc["thresholds"])
        return cls(bubbles=bubbles, **kw)

    @classmethod
    def from_json(cls, text: str) -> "MultiBubbleSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ConditionLine:
    """One data condition with exact and relaxed verdicts (values as natural logs)."""

    name: str
    bubble: int
    value_log: float
    exact_threshold_log: float
    relaxed_threshold_log: float
    pass_exact: bool
    pass_relaxed: bool

    @property
    def passed(self) -> bool:
        return self.pass_relaxed

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "bubble": self.bubble,
            "value_log": _finite(self.value_log),
            "exact_threshold_log": _finite(self.exact_threshold_log),
            "relaxed_threshold_log": _finite(self.relaxed_threshold_log),
            "pass_exact": self.pass_exact,
            "pass_relaxed": self.pass_relaxed,
            "pass": self.passed,
        }


def _finite(v: float):
    if math.isfinite(v):
        return float(v)
    return "-inf" if v < 0 else "inf"


def _log(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def _line(name, j, value_log, exact_log, relaxed_log, strict=False) -> ConditionLine:
    """``value ≤ threshold`` (``<`` with ``strict``), compared in log space."""
    if strict:
        return ConditionLine(name, j, value_log, exact_log, relaxed_log,
                             value_log < exact_log, value_log < relaxed_log)
    return ConditionLine(name, j, value_log, exact_log, relaxed_log,
                         value_log <= exact_log, value_log <= relaxed_log)


# ---------------------------------------------------------------------------
# local boxes
# ---------------------------------------------------------------------------
def extract_local(field: Field, center: Sequence[float], half_width: float) -> tuple[Field, np.ndarray]:
    """Cut a periodic sub-box of power-of-two size centred at the grid point nearest ``center``.

    Returns the local field (centre at the local origin) and the physical
    coordinate of the local origin.  Intended for fields that vanish near
    the sub-box edges, e.g. after a ``χ_{1,loc}`` window.
    """
    grid = field.grid
    idx = []
    offset = []
    n_sub = []
    for ax, h, n, c in zip(grid.axes, grid.dx, grid.n_points, center):
        need = 2.0 * half_width / h
        k = 1
        while k < need:
            k *= 2
        k = min(k, n)
        ic = int(np.argmin(np.abs(((ax - c) + 0.5 * (n * h)) % (n * h) - 0.5 * (n * h))))
        idx.append((ic - k // 2 + np.arange(k)) % n)
        offset.append(float(ax[ic]))
        n_sub.append(k)
    vals = field.values
    for axis, ii in enumerate(idx):
        vals = np.take(vals, ii, axis=axis)
    sub = Grid(grid.dimension, tuple(k * h for k, h in zip(n_sub, grid.dx)), tuple(n_sub))
    return Field(sub, vals, field.time), np.array(offset)


def _shift_params(p: BubbleParams, offset: np.ndarray) -> BubbleParams:
    return BubbleParams(p.b, p.lam, tuple(np.asarray(p.x_center) + offset), p.gamma, p.s)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------
def _seed(grid: Grid, seed: dict | None) -> np.ndarray:
    if not seed or seed.get("kind", "zero") == "zero":
        return np.zeros(grid.shape, complex)
    kind = seed["kind"]
    amp = float(seed.get("amplitude", 0.0))
    if kind == "gaussian":
        c = seed.get("center", [0.0] * grid.dimension)
        w = float(seed.get("width", 1.0))
        r = grid.radius(c)
        return amp * np.exp(-(r / w) ** 2).astype(complex)
    if kind == "noise":
        rng = np.random.default_rng(int(seed.get("seed", 0)))
        return amp * (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    raise ConfigError(f"unknown epsilon seed kind {kind!r}")


def _representers(grid: Grid, profile, params: BubbleParams) -> list[np.ndarray]:
    """Compactly supported correction directions ``|y|²Q̃, y_iQ̃, iQ̃, i|y|²Q̃``.

    Their Gram matrix against the pairings is nonsingular since
    ``(Q̃, Λ²Q̃) = −‖ΛQ̃‖²`` and ``(|y|²Q̃, ΛQ̃) ≠ 0``; unlike ``iΛQ̃`` they add
    nothing outside the profile support.
    """
    q = place_profile(grid, profile, params)
    y = [dx / params.lam for dx in grid.displacement(params.x_center)]
    r2 = sum(c * c for c in y)
    return [r2 * q] + [c * q for c in y] + [1j * q, 1j * r2 * q]


def project_orthogonal(eps_x: np.ndarray, grid: Grid, profile, params: BubbleParams) -> np.ndarray:
    """Remove from ``ε`` its components along the constraint representers.

    Solves the Gram system ``G c = ℓ(ε)`` with ``G_kj = ℓ_k(g_j)`` so that
    ``ε − Σ c_j g_j`` satisfies all orthogonality conditions.
    """
    reps = _representers(grid, profile, params)
    ell = _pairings(eps_x, grid, params, profile)
    G = np.column_stack([_pairings(g, grid, params, profile) for g in reps])
    coef = np.linalg.solve(G, ell)
    out = eps_x.copy()
    for c, g in zip(coef, reps):
        out = out - c * g
    return out


def _energy_correction(u: np.ndarray, grid: Grid, profile, params: BubbleParams,
                       scale: float, max_iter: int = 40) -> np.ndarray:
    """Orthogonal correction ``κ·h`` making the local energy vanish."""
    h = project_orthogonal(place_profile(grid, profile, params), grid, profile, params)

    def e_loc(kappa):
        return local_observables(Field(grid, u + kappa * h), params.x_center, scale).energy

    # secant iteration on the scalar amplitude
    k0, e0 = 0.0, e_loc(0.0)
    k1 = -1e-3 * math.copysign(1.0, e0)
    e1 = e_loc(k1)
    for _ in range(max_iter):
        if e1 == e0 or abs(e1) < 1e-16:
            break
        k0, k1 = k1, k1 - e1 * (k1 - k0) / (e1 - e0)
        e0, e1 = e1, e_loc(k1)
    kappa = k1 if abs(e1) < abs(e0) else k0
    return kappa * h


def build_initial_data(spec: MultiBubbleSpec, profiles: ProfileFamily,
                       validate: bool = True) -> tuple[Field, list[ConditionLine] | None]:
    """Superpose windowed bubbles plus an orthogonally projected ``ε``.

    Raises
    ------
    ResolutionError
        If some ``λ_j0`` is covered by fewer than 16 grid points.
    """
    grid = spec.grid()
    dx = min(grid.dx)
    if min(bp.lam for bp in spec.bubbles) < 16 * dx:
        raise ResolutionError("grid cannot resolve the smallest λ_j0 (need 16 points across λ)")
    scale = spec.window_scale
    u = np.zeros(grid.shape, complex)
    for bp in spec.bubbles:
        prof = profiles(bp.b)
        if bp.lam * prof.support_radius > (2.0 / 3.0) * scale:
            raise ConfigError("bubble support exceeds the inner plateau of χ_{1,loc}")
        u += chi1_loc(grid.radius(bp.x_center), scale) * place_profile(grid, prof, bp)
    seed = _seed(grid, spec.epsilon_seed)
    if np.any(seed != 0):
        for bp in spec.bubbles:
            prof = profiles(bp.b)
            w = chi1_loc(grid.radius(bp.x_center), scale)
            local = project_orthogonal(w * seed, grid, prof, bp)
            seed = seed - w * seed + local
        u += seed
    if spec.energy_correction:
        for bp in spec.bubbles:
            u += _energy_correction(u, grid, profiles(bp.b), bp, scale)
    field = Field(grid, u, 0.0, {"spec": spec.to_json()})
    report = validate_well_prepared(field, spec, profiles) if validate else None
    return field, report


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------
def exterior_sobolev_norm(field: Field, centers: Sequence[Sequence[float]], radius: float,
                          order: float) -> float:
    """``‖w u‖_{H^order}`` with ``w`` a C² window equal to 1 where ``min_j|x − x_j| ≥ radius``."""
    grid = field.grid
    w = np.ones(grid.shape)
    for c in centers:
        w *= 1.0 - plateau(grid.radius(c), 0.75 * radius, radius)
    return grid.sobolev_norm(w * field.values, order)


def validate_well_prepared(field: Field, spec: MultiBubbleSpec, profiles: ProfileFamily,
                           fits: list[BubbleParams] | None = None) -> list[ConditionLine]:
    """Evaluate every data condition per bubble, exact and relaxed.

    The bubble parameters are re-fitted by ``decompose`` on the windowed
    field, starting from the spec values (or from ``fits``).
    """
    th = spec.thresholds
    grid = field.grid
    scale = spec.window_scale
    centers = [bp.x_center for bp in spec.bubbles]
    lines: list[ConditionLine] = []
    sum_small = 0.0
    for j, bp in enumerate(spec.bubbles):
        guess = fits[j] if fits is not None else bp
        w = chi1_loc(grid.radius(bp.x_center), scale)
        loc, off = extract_local(field.with_values(field.values * w), bp.x_center, scale)
        p_loc, eps = decompose(loc, _shift_params(guess, -off), profiles)
        params = _shift_params(p_loc, off)
        b = params.b
        lg = -math.pi / b  # ln Γ_b (proxy)
        lines.append(_line("sign_b", j, -b, 0.0, 0.0, strict=True))
        lines.append(_line("b_below_alpha", j, _log(b), _log(th.alpha), _log(th.alpha), strict=True))
        orth = _pairings(eps.values_x, eps.grid, eps.params, profiles(b))
        lines.append(_line("orthogonality", j, _log(float(np.max(np.abs(orth)))),
                           math.log(1e-8), math.log(1e-8)))
        h1 = math.sqrt(eps.grid.integrate(np.abs(eps.values_x) ** 2).real
                       + params.lam**2 * eps.grid.grad_norm_sq(eps.values_x))
        sum_small += params.lam + h1
        ln_lam = math.log(params.lam)
        # log-log window: exact double exponentials, relaxed single exponentials
        lo_p, hi_p = -math.exp(min(2.0 * math.pi / b, 700)), -math.exp(0.5 * math.pi / b)
        lo_r, hi_r = -2.0 * math.pi / b, -0.5 * math.pi / b
        lines.append(ConditionLine("loglog_window_upper", j, ln_lam, hi_p, hi_r,
                                   ln_lam < hi_p, ln_lam < hi_r))
        lines.append(ConditionLine("loglog_window_lower", j, ln_lam, lo_p, lo_r,
                                   ln_lam > lo_p, ln_lam > lo_r))
        wn = weighted_error_norm(eps)
        lines.append(_line("local_error", j, wn["log_sum"], th.small_exponent * lg, th.small_exponent * lg))
        obs = local_observables(field, bp.x_center, scale)
        lines.append(_line("tame_energy", j, _log(params.lam**2 * abs(obs.energy)),
                           th.tame_exponent * lg, th.tame_relaxed_exponent * lg))
        pnorm = float(np.linalg.norm(obs.momentum))
        lines.append(_line("tame_momentum", j, _log(params.lam * pnorm),
                           th.tame_exponent * lg, th.tame_relaxed_exponent * lg))
    lines.append(_line("smallness", -1, _log(sum_small), _log(th.alpha), _log(th.alpha)))
    ext = exterior_sobolev_norm(field, centers, th.exterior_radius, th.n2)
    lines.append(_line("exterior_smoothness", -1, _log(ext), _log(th.alpha), _log(th.alpha)))
    sep = min((float(np.linalg.norm(np.subtract(a, c))) for i, a in enumerate(centers)
               for c in centers[i + 1:]), default=math.inf)
    lines.append(ConditionLine("separation", -1, -_log(sep), -_log(th.separation), -_log(th.separation),
                               sep >= th.separation, sep >= th.separation))
    return lines


def report_json(lines: list[ConditionLine]) -> str:
    return json.dumps([ln.as_dict() for ln in lines], indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# tracking
# ---------------------------------------------------------------------------
@dataclass
class BubbleTrace:
    """Modulation parameters of one bubble over time.

    ``t`` is measured in units ``e^{time_unit_log}``; physical-frame traces
    use ``time_unit_log = 0`` and rescaled-frame traces ``2 ln λ_0``.
    """

    t: np.ndarray
    s: np.ndarray
    b: np.ndarray
    log_lam: np.ndarray
    x: np.ndarray
    gamma: np.ndarray
    grad_sq: np.ndarray
    exp_weighted: np.ndarray
    eps_l2_sq: np.ndarray
    e_loc: np.ndarray
    p_loc: np.ndarray
    local_mass: np.ndarray
    orth_residual: np.ndarray
    time_unit_log: float = 0.0
    flags: dict = dc_field(default_factory=dict)

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.log_lam)

    def __len__(self) -> int:
        return len(self.t)

    def truncate(self, n: int) -> "BubbleTrace":
        kw = {k: getattr(self, k)[:n] for k in ("t", "s", "b", "log_lam", "x", "gamma", "grad_sq",
                                                 "exp_weighted", "eps_l2_sq", "e_loc", "p_loc", "local_mass",
                                                 "orth_residual")}
        return BubbleTrace(**kw, time_unit_log=self.time_unit_log, flags=dict(self.flags))

    @classmethod
    def from_rescaled(cls, trace: dict, log_lambda0: float) -> "BubbleTrace":
        """Wrap the output of ``evolve_rescaled_frame``."""
        n = len(trace["s"])
        d = sum(1 for k in trace if k.startswith("x_"))
        x = np.column_stack([trace[f"x_{k}"] for k in range(d)])
        nan = np.full(n, np.nan)
        return cls(
            t=trace["t_scaled"], s=trace["s"], b=trace["b"], log_lam=trace["log_lambda"],
            x=x, gamma=np.unwrap(trace["gamma"]), grad_sq=trace["grad_sq"],
            exp_weighted=trace["exp_weighted"], eps_l2_sq=trace["eps_l2_sq"], e_loc=nan, p_loc=np.full((n, d), np.nan),
            local_mass=trace["mass"], orth_residual=trace["orth_residual"],
            time_unit_log=2.0 * log_lambda0,
        )

    def to_csv(self, path) -> None:
        d = self.x.shape[1]
        cols = [self.t, self.s, self.b, self.lam, self.log_lam]
        names = ["t", "s", "b", "lambda", "log_lambda"]
        cols += [self.x[:, k] for k in range(d)]
        names += [f"x_{k}" for k in range(d)]
        cols += [self.gamma, self.grad_sq, self.exp_weighted, self.eps_l2_sq, self.e_loc]
        names += ["gamma", "grad_sq", "exp_weighted", "eps_l2_sq", "E_loc"]
        cols += [self.p_loc[:, k] for k in range(d)]
        names += [f"P_loc_{k}" for k in range(d)]
        cols += [self.local_mass, self.orth_residual]
        names += ["local_mass", "orth_residual"]
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names),
                   comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, time_unit_log: float = 0.0) -> "BubbleTrace":
        """Inverse of :meth:`to_csv` (``flags`` are not stored)."""
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        names = data.dtype.names
        d = sum(1 for k in names if k.startswith("x_"))

        def col(k):
            return np.asarray(data[k], float)

        return cls(
            t=col("t"), s=col("s"), b=col("b"), log_lam=col("log_lambda"),
            x=np.column_stack([col(f"x_{k}") for k in range(d)]), gamma=col("gamma"),
            grad_sq=col("grad_sq"), exp_weighted=col("exp_weighted"), eps_l2_sq=col("eps_l2_sq"),
            e_loc=col("E_loc"), p_loc=np.column_stack([col(f"P_loc_{k}") for k in range(d)]),
            local_mass=col("local_mass"), orth_residual=col("orth_residual"),
            time_unit_log=time_unit_log,
        )


class Tracker:
    """Observer that fits every bubble at each checkpoint.

    Usable as the ``observer`` of ``solver.evolve``: returns ``lambda_floor``
    once some ``λ_j ≤ lambda_stop``, ``collision`` when two centres come
    within ``collision_distance`` and ``fit_failed`` when a fit diverges.
    """

    def __init__(self, spec: MultiBubbleSpec, profiles: ProfileFamily,
                 lambda_stop: float | None = None, collision_distance: float = 5.0,
                 keep_eps: bool = False):
        self.spec = spec
        self.profiles = profiles
        self.lambda_stop = lambda_stop
        self.collision_distance = collision_distance
        self.guesses = list(spec.bubbles)
        self.rows: list[list[dict]] = [[] for _ in spec.bubbles]
        self.first_floor: int | None = None
        self.failure: str | None = None
        self.keep_eps = keep_eps
        self.eps: list[list] = [[] for _ in spec.bubbles]

    def __call__(self, field: Field, row: dict | None = None) -> str | None:
        grid = field.grid
        scale = self.spec.window_scale
        fitted = []
        for j, guess in enumerate(self.guesses):
            c = guess.x_center
            w = chi1_loc(grid.radius(c), scale)
            loc, off = extract_local(field.with_values(field.values * w), c, scale)
            try:
                p_loc, eps = decompose(loc, _shift_params(guess, -off), self.profiles)
            except (ConvergenceError, ConfigError) as exc:
                self.failure = f"bubble {j}: {exc}"
                return "fit_failed"
            params = _shift_params(p_loc, off)
            wn = weighted_error_norm(eps)
            obs = local_observables(field, params.x_center, scale)
            orth = _pairings(eps.values_x, eps.grid, eps.params, self.profiles(params.b))
            self.rows[j].append({
                "t": field.time, "b": params.b, "log_lam": math.log(params.lam),
                "x": np.array(params.x_center), "gamma": params.gamma,
                "grad_sq": wn["grad_sq"], "exp_weighted": wn["exp_weighted"], "l2_sq": wn["l2_sq"],
                "e_loc": obs.energy, "p_loc": np.array(obs.momentum), "local_mass": obs.mass,
                "orth": float(np.max(np.abs(orth))),
            })
            if self.keep_eps:
                self.eps[j].append(eps)
            fitted.append(params)
        self.guesses = fitted
        for i, a in enumerate(fitted):
            for bp in fitted[i + 1:]:
                if np.linalg.norm(np.subtract(a.x_center, bp.x_center)) < self.collision_distance:
                    return "collision"
        if self.lambda_stop is not None:
            lams = [p.lam for p in fitted]
            if min(lams) <= self.lambda_stop:
                self.first_floor = int(np.argmin(lams))
                return "lambda_floor"
        return None

    def traces(self) -> list[BubbleTrace]:
        out = []
        for j, rows in enumerate(self.rows):
            if not rows:
                raise ConvergenceError("no checkpoint was fitted")
            t = np.array([r["t"] for r in rows])
            log_lam = np.array([r["log_lam"] for r in rows])
            b0 = self.spec.bubbles[j].b
            s = rescaled_time(t, np.exp(log_lam), b0) if len(t) > 1 else np.array([math.exp(log_s0(b0))])
            tr = BubbleTrace(
                t=t, s=s, b=np.array([r["b"] for r in rows]), log_lam=log_lam,
                x=np.array([r["x"] for r in rows]), gamma=np.unwrap([r["gamma"] for r in rows]),
                grad_sq=np.array([r["grad_sq"] for r in rows]),
                exp_weighted=np.array([r["exp_weighted"] for r in rows]),
                eps_l2_sq=np.array([r["l2_sq"] for r in rows]),
                e_loc=np.array([r["e_loc"] for r in rows]), p_loc=np.array([r["p_loc"] for r in rows]),
                local_mass=np.array([r["local_mass"] for r in rows]),
                orth_residual=np.array([r["orth"] for r in rows]),
            )
            tr.flags = {"first_floor": self.first_floor == j, "failure": self.failure}
            out.append(tr)
        return out


def track(checkpoints: Sequence[Field], spec: MultiBubbleSpec, profiles: ProfileFamily,
          lambda_stop: float | None = None) -> list[BubbleTrace]:
    """Fit all bubbles along stored checkpoints with continuation guesses.

    A fit failure truncates the traces and sets ``flags["failure"]``.
    """
    tracker = Tracker(spec, profiles, lambda_stop)
    for f in checkpoints:
        if tracker(f) is not None:
            break
    return tracker.traces()


@dataclass
class MultiBubbleRun:
    traces: list[BubbleTrace]
    stop_reason: str
    final: Field
    trajectory: object
    report: list[ConditionLine] | None


def run_multibubble(spec: MultiBubbleSpec, profiles: ProfileFamily, config,
                    lambda_stop: float | None = None, validate: bool = False,
                    initial: Field | None = None) -> MultiBubbleRun:
    """Build the data, evolve in the physical frame and track every bubble."""
    from .solver import evolve

    if initial is None:
        initial, report = build_initial_data(spec, profiles, validate=validate)
    else:
        report = None
    tracker = Tracker(spec, profiles, lambda_stop)
    traj = evolve(initial, config, observer=tracker)
    return MultiBubbleRun(tracker.traces(), traj.stop_reason, traj.final, traj, report)
