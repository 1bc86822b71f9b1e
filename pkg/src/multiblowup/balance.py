"""Simultaneous blow-up at prescribed points: endpoint map, boundary
certificate and root search over initial scale and position offsets.

The blow-up time is proxied by ``T_𝓐``, the first time ``min_j λ_j``
reaches ``lambda_stop``; all endpoint values are interpolated to that
crossing (linear in ``ln λ`` and in the other parameters between
checkpoints) so that the endpoint map is continuous in its inputs.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError, MultiBlowupError
from .modulation import BubbleParams
from .multibubble import BubbleTrace, MultiBubbleSpec, Tracker, build_initial_data
from .profiles import ProfileFamily
from .solver import SolverConfig, evolve

__all__ = [
    "BalanceProblem",
    "SearchPoint",
    "Endpoint",
    "evaluate_endpoint_map",
    "evaluate_many",
    "ratio_first_exit",
    "boundary_points",
    "boundary_certificate",
    "Certificate",
    "find_balanced",
    "SearchResult",
    "confirm_root",
    "sign_sweep",
]


@dataclass
class BalanceProblem:
    """Base data and search parameters.

    ``base.bubbles`` carry the targets ``x_{j,∞}`` as centres and the
    reference scale ``λ₁₀`` as the first bubble's ``lam``; their ``b`` and
    ``γ`` are kept fixed along the search.
    """

    base: MultiBubbleSpec
    profiles: ProfileFamily
    solver: SolverConfig
    lambda_stop: float
    a0: float = 0.05
    a1: float = 0.005
    a2: float = 0.0005
    rel_tol: float = 0.05
    pos_tol: float = 0.01
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if not 1.0 > self.a0 > self.a1 > self.a2 > 0:
            raise ConfigError("need 1 > a0 > a1 > a2 > 0")
        grid = self.base.grid()
        if self.lambda_stop < 8.0 * min(grid.dx):
            raise ConfigError("lambda_stop is below the grid floor (8 dx)")
        if self.lambda_stop >= self.lambda10:
            raise ConfigError("lambda_stop must lie below the initial scale")

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def d(self) -> int:
        return self.base.dimension

    @property
    def lambda10(self) -> float:
        return self.base.bubbles[0].lam

    @property
    def targets(self) -> list[np.ndarray]:
        return [np.asarray(bp.x_center, float) for bp in self.base.bubbles]

    @property
    def beta_max(self) -> float:
        return self.a0 * self.lambda10

    @property
    def dim(self) -> int:
        return (self.m - 1) + self.m * self.d


@dataclass(frozen=True)
class Endpoint:
    """``y_i = λ_i(T) − λ₁(T)`` (i ≥ 2) and ``z_j = x_j(T) − x_{j,∞}`` at ``T = T_𝓐``."""

    y: tuple[float, ...]
    z: tuple[tuple[float, ...], ...]
    T: float
    lambda1_T: float
    first: int


@dataclass
class SearchPoint:
    beta: tuple[float, ...]
    d_offsets: tuple[tuple[float, ...], ...]
    endpoint: Endpoint | None = None
    status: str = "pending"
    index: int = -1
    detail: str = ""

    def vector(self, problem: BalanceProblem) -> np.ndarray:
        """Normalised domain coordinates ``(β/(a₀λ₁₀), d)``."""
        return np.concatenate([np.asarray(self.beta, float) / problem.beta_max,
                               np.asarray(self.d_offsets, float).reshape(-1)])

    @classmethod
    def from_vector(cls, v: Sequence[float], problem: BalanceProblem) -> "SearchPoint":
        v = np.asarray(v, float)
        k = problem.m - 1
        beta = tuple(float(x) * problem.beta_max for x in v[:k])
        d = tuple(tuple(float(c) for c in row) for row in v[k:].reshape(problem.m, problem.d))
        return cls(beta, d)

    def image(self, problem: BalanceProblem) -> np.ndarray:
        """Endpoint in the same normalised coordinates: ``(y/(a₀λ₁(T)), z)``."""
        if self.endpoint is None:
            raise ConfigError("point has no endpoint")
        ep = self.endpoint
        y = np.asarray(ep.y, float) / (problem.a0 * ep.lambda1_T)
        return np.concatenate([y, np.asarray(ep.z, float).reshape(-1)])

    def residual(self, problem: BalanceProblem) -> float:
        """``max(|y_i|/λ₁(T)/rel_tol, |z_j|/pos_tol)``; ``≤ 1`` meets the acceptance tolerances."""
        if self.endpoint is None:
            return math.inf
        ep = self.endpoint
        ry = max((abs(v) / ep.lambda1_T for v in ep.y), default=0.0) / problem.rel_tol
        rz = max((float(np.linalg.norm(z)) for z in ep.z), default=0.0) / problem.pos_tol
        return max(ry, rz)

    def as_record(self) -> dict:
        ep = self.endpoint
        return {
            "index": self.index,
            "beta": list(self.beta),
            "d": [list(r) for r in self.d_offsets],
            "endpoint": None if ep is None else {"y": list(ep.y), "z": [list(r) for r in ep.z],
                                                 "lambda1_T": ep.lambda1_T, "first": ep.first},
            "T": None if ep is None else ep.T,
            "status": self.status,
            "detail": self.detail,
        }


def _spec_for(point: SearchPoint, problem: BalanceProblem, spec: MultiBubbleSpec | None = None) -> MultiBubbleSpec:
    base = spec or problem.base
    lam10 = problem.lambda10
    bubbles = []
    for j, bp in enumerate(base.bubbles):
        lam = lam10 if j == 0 else lam10 + point.beta[j - 1]
        x = tuple(np.asarray(bp.x_center, float) + np.asarray(point.d_offsets[j], float))
        bubbles.append(BubbleParams(bp.b, lam, x, bp.gamma))
    return replace(base, bubbles=bubbles)


def _crossing(traces: list[BubbleTrace], lambda_stop: float):
    """Interpolated first time ``min_j λ_j = λ_stop`` and the values there."""
    n = min(len(tr) for tr in traces)
    ls = math.log(lambda_stop)
    lmin = np.min(np.array([tr.log_lam[:n] for tr in traces]), axis=0)
    hit = np.nonzero(lmin <= ls)[0]
    if hit.size == 0:
        return None
    i = int(hit[0])
    first = int(np.argmin([tr.log_lam[i] for tr in traces]))
    if i == 0:
        w, i0 = 0.0, 0
    else:
        i0 = i - 1
        a, c = traces[first].log_lam[i0], traces[first].log_lam[i]
        w = (a - ls) / (a - c) if a != c else 1.0

    def at(arr):
        return (1 - w) * arr[i0] + w * arr[i if i0 != i else i0]

    T = float(at(traces[0].t))
    lams = [math.exp(at(tr.log_lam)) for tr in traces]
    xs = [np.array([at(tr.x[:, k]) for k in range(tr.x.shape[1])]) for tr in traces]
    return T, lams, xs, first


def _simulate(spec: MultiBubbleSpec, problem: BalanceProblem, lambda_stop: float):
    u0, _ = build_initial_data(spec, problem.profiles, validate=False)
    tracker = Tracker(spec, problem.profiles, lambda_stop=lambda_stop)
    traj = evolve(u0, problem.solver, observer=tracker)
    return tracker, traj


def evaluate_endpoint_map(point: SearchPoint, problem: BalanceProblem,
                          lambda_stop: float | None = None,
                          spec: MultiBubbleSpec | None = None) -> SearchPoint:
    """Evolve the data of ``point`` to ``T_𝓐`` and fill its endpoint.

    A tracking failure before any bubble reaches ``lambda_stop`` marks the
    point ``infeasible`` (no exception).
    """
    lam_stop = problem.lambda_stop if lambda_stop is None else lambda_stop
    out = SearchPoint(point.beta, point.d_offsets, index=point.index)
    try:
        s = _spec_for(point, problem, spec)
        tracker, traj = _simulate(s, problem, lam_stop)
        traces = tracker.traces()
    except (MultiBlowupError, ValueError) as exc:
        out.status, out.detail = "infeasible", str(exc)
        return out
    hit = _crossing(traces, lam_stop)
    if hit is None:
        out.status = "infeasible"
        out.detail = f"stopped ({traj.stop_reason}) before reaching lambda_stop"
        if tracker.failure:
            out.detail += f": {tracker.failure}"
        return out
    T, lams, xs, first = hit
    targets = problem.targets
    y = tuple(lams[i] - lams[0] for i in range(1, problem.m))
    z = tuple(tuple(float(c) for c in xs[j] - targets[j]) for j in range(problem.m))
    out.endpoint = Endpoint(y, z, T, lams[0], first)
    out.status = "ok"
    return out


def _eval_job(args):
    point, problem, lam_stop = args
    return evaluate_endpoint_map(point, problem, lam_stop)


def evaluate_many(points: Sequence[SearchPoint], problem: BalanceProblem,
                  lambda_stop: float | None = None) -> list[SearchPoint]:
    """Independent evaluations, in a process pool when ``problem.workers > 1``; order preserved."""
    jobs = [(p, problem, lambda_stop) for p in points]
    if problem.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=problem.workers) as ex:
            return list(ex.map(_eval_job, jobs))
    return [_eval_job(j) for j in jobs]


# ---------------------------------------------------------------------------
# first exit of the scale ratios
# ---------------------------------------------------------------------------
@dataclass
class FirstExit:
    T_beta: float
    exit_face: tuple[int, int] | None
    status: str
    t: np.ndarray
    F: np.ndarray
    outward_derivative: float | None


def ratio_first_exit(problem: BalanceProblem, beta: Sequence[float], a0: float | None = None) -> FirstExit:
    """First time ``F = (λ_i/λ₁)_{i≥2}`` leaves ``[1−a₀, 1+a₀]^{m−1}``.

    ``exit_face = (i, ±1)``; a run that reaches ``lambda_stop`` with ``F``
    inside ends ``balanced``.  ``outward_derivative`` is the one-sided
    difference quotient of the exiting ratio, signed along the face normal.
    """
    a0 = problem.a0 if a0 is None else a0
    k = problem.m - 1
    beta = tuple(float(v) for v in beta)
    if len(beta) != k:
        raise ConfigError(f"need {k} beta values")
    ratios0 = np.array([(problem.lambda10 + bi) / problem.lambda10 for bi in beta])
    pt = SearchPoint(beta, tuple((0.0,) * problem.d for _ in range(problem.m)))
    spec = _spec_for(pt, problem)
    tracker, _ = _simulate(spec, problem, problem.lambda_stop)
    traces = tracker.traces()
    n = min(len(tr) for tr in traces)
    t = traces[0].t[:n]
    F = np.array([np.exp(traces[i].log_lam[:n] - traces[0].log_lam[:n]) for i in range(1, problem.m)]).T
    tol = 1e-12
    on_face = np.abs(np.abs(ratios0 - 1.0) - a0) <= 1e-9 * a0
    if np.any(on_face) or np.any(np.abs(ratios0 - 1.0) > a0 + tol):
        i = int(np.argmax(np.abs(ratios0 - 1.0)))
        sgn = 1 if ratios0[i] > 1 else -1
        der = None
        if n > 1:
            der = sgn * float((F[1, i] - F[0, i]) / (t[1] - t[0]))
        return FirstExit(0.0, (i + 2, sgn), "exit", t, F, der)
    out = np.abs(F - 1.0) > a0
    rows = np.nonzero(out.any(axis=1))[0]
    if rows.size == 0:
        return FirstExit(float(t[-1]), None, "balanced", t, F, None)
    r = int(rows[0])
    i = int(np.argmax(np.abs(F[r] - 1.0)))
    sgn = 1 if F[r, i] > 1 else -1
    edge = 1.0 + sgn * a0
    f0, f1 = F[r - 1, i], F[r, i]
    w = (edge - f0) / (f1 - f0) if f1 != f0 else 1.0
    T = float(t[r - 1] + w * (t[r] - t[r - 1]))
    der = sgn * float((f1 - f0) / (t[r] - t[r - 1]))
    return FirstExit(T, (i + 2, sgn), "exit", t, F, der)


# ---------------------------------------------------------------------------
# boundary certificate
# ---------------------------------------------------------------------------
def boundary_points(problem: BalanceProblem, n_samples: int) -> list[tuple[SearchPoint, int, int]]:
    """Deterministic per-face samples of the boundary of ``[−1, 1]^{dim}`` (normalised).

    Returns ``(point, coordinate, side)`` triples.  Samples are spread evenly
    over the ``2·dim`` faces; coordinates other than the face one are drawn
    uniformly from ``[−1, 1]`` with ``problem.seed``.
    """
    dim = problem.dim
    if dim == 0:
        return []
    rng = np.random.default_rng(problem.seed)
    faces = [(c, s) for c in range(dim) for s in (-1, 1)]
    per = int(math.ceil(n_samples / len(faces)))
    out = []
    for c, s in faces:
        for _ in range(per):
            v = rng.uniform(-1.0, 1.0, dim)
            v[c] = s
            out.append((SearchPoint.from_vector(v, problem), c, s))
    return out


def segment_distance(a: np.ndarray, f: np.ndarray) -> float:
    """Euclidean distance from 0 to the segment ``{(1−t)a + t f : t ∈ [0, 1]}``."""
    d = f - a
    dd = float(d @ d)
    t = 0.0 if dd == 0 else min(1.0, max(0.0, -float(a @ d) / dd))
    return float(np.linalg.norm(a + t * d))


def face_margin(a: np.ndarray, f: np.ndarray, coord: int) -> float:
    """``min_t |(1−t)a_c + t f_c|``: positive iff both endpoints share the face sign."""
    x, y = a[coord], f[coord]
    if x * y <= 0:
        return 0.0
    return float(min(abs(x), abs(y)))


@dataclass
class Certificate:
    passed: bool
    min_margin: float
    min_face_margin: float
    n_points: int
    records: list[dict]
    void: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "pass": self.passed, "void": self.void, "min_margin": self.min_margin,
            "min_face_margin": self.min_face_margin, "n_points": self.n_points,
            "records": self.records,
        }, indent=2, sort_keys=True)


def boundary_certificate(problem: BalanceProblem, n_samples: int = 32,
                         log: list | None = None) -> Certificate:
    """Check that no boundary segment from ``𝓐`` to ``𝓕(𝓐)`` meets the origin.

    Any infeasible evaluation voids the certificate.
    """
    if problem.dim == 0:
        return Certificate(True, math.inf, math.inf, 0, [])
    samples = boundary_points(problem, n_samples)
    pts = []
    for k, (p, _, _) in enumerate(samples):
        p.index = k
        pts.append(p)
    done = evaluate_many(pts, problem)
    records = []
    margins, fmargins = [], []
    void = False
    for (p0, c, s), p in zip(samples, done):
        rec = p.as_record()
        rec.update({"face": [c, s]})
        if p.status != "ok":
            void = True
            rec.update({"margin": None, "face_margin": None})
        else:
            a = p.vector(problem)
            f = p.image(problem)
            m = segment_distance(a, f)
            fm = face_margin(a, f, c)
            margins.append(m)
            fmargins.append(fm)
            rec.update({"margin": m, "face_margin": fm, "image": f.tolist(), "domain": a.tolist()})
        records.append(rec)
        if log is not None:
            log.append(rec)
    min_m = min(margins) if margins else math.nan
    min_f = min(fmargins) if fmargins else math.nan
    passed = (not void) and bool(margins) and min_m > 0
    return Certificate(passed, float(min_m), float(min_f), len(samples), records, void)


# ---------------------------------------------------------------------------
# root search
# ---------------------------------------------------------------------------
@dataclass
class SearchResult:
    point: SearchPoint
    residual: float
    converged: bool
    log: list[dict] = dc_field(default_factory=list)
    iterations: int = 0

    def log_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


def find_balanced(problem: BalanceProblem, tol: float = 0.2, max_iter: int = 8,
                  fd_step: float = 0.05, start: Sequence[float] | None = None) -> SearchResult:
    """Damped quasi-Newton (Broyden) on the normalised endpoint map.

    Convergence when ``SearchPoint.residual ≤ tol`` (``1`` is the acceptance
    level, so ``tol < 1`` leaves headroom).  A finite-difference Jacobian is
    built once at the start and refreshed when a step fails to reduce the
    residual.  Returns the best point with ``converged=False`` when the
    budget runs out.
    """
    dim = problem.dim
    x = np.zeros(dim) if start is None else np.asarray(start, float)
    centre = SearchPoint.from_vector(x, problem)
    if math.isinf(tol):
        centre.status = "unevaluated"
        return SearchResult(centre, math.inf, True, [], 0)
    log: list[dict] = []
    counter = [0]

    def ev(v):
        p = SearchPoint.from_vector(np.clip(v, -1.0, 1.0), problem)
        p.index = counter[0]
        counter[0] += 1
        q = evaluate_endpoint_map(p, problem)
        log.append(q.as_record())
        if q.status != "ok":
            raise ConvergenceError(f"infeasible evaluation at {v}: {q.detail}")
        return q

    def g(q):
        f = q.image(problem)
        # tolerance-scaled residual vector
        scale = np.concatenate([np.full(problem.m - 1, problem.rel_tol / problem.a0),
                                np.full(problem.m * problem.d, problem.pos_tol)])
        return f / scale

    cur = ev(x)
    best = cur
    fx = g(cur)
    it = 0
    J = None
    while cur.residual(problem) > tol and it < max_iter:
        if J is None:
            J = np.empty((dim, dim))
            for k in range(dim):
                xk = x.copy()
                xk[k] += fd_step
                J[:, k] = (g(ev(xk)) - fx) / fd_step
        try:
            dx = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular endpoint Jacobian") from exc
        step = 1.0
        accepted = False
        for _ in range(4):
            xn = np.clip(x + step * dx, -1.0, 1.0)
            qn = ev(xn)
            fn = g(qn)
            if qn.residual(problem) < cur.residual(problem):
                accepted = True
                break
            step *= 0.5
        it += 1
        if not accepted:
            J = None
            continue
        s = xn - x
        J = J + np.outer(fn - fx - J @ s, s) / float(s @ s)
        x, fx, cur = xn, fn, qn
        if cur.residual(problem) < best.residual(problem):
            best = cur
    res = best.residual(problem)
    return SearchResult(best, res, res <= tol, log, it)


def confirm_root(point: SearchPoint, problem: BalanceProblem, refine_time: bool = True,
                 refine_space: bool = False, halve_lambda_stop: bool = True,
                 floor: float = 0.25) -> dict:
    """Re-run a balanced point with ``λ_stop/2`` and/or refined numerics.

    ``growth = residual_new / max(residual_old, floor)``; the floor keeps a
    residual far inside tolerance from turning round-off into growth.
    """
    prob = problem
    spec = None
    if refine_time:
        prob = replace(prob, solver=replace(prob.solver, dt_safety=0.5 * prob.solver.dt_safety))
    if refine_space:
        spec = replace(prob.base, n_points=2 * prob.base.n_points)
    lam_stop = prob.lambda_stop / 2 if halve_lambda_stop else prob.lambda_stop
    if halve_lambda_stop:
        prob = replace(prob, lambda_stop=lam_stop)
    q = evaluate_endpoint_map(SearchPoint(point.beta, point.d_offsets), prob, lam_stop, spec)
    old = point.residual(problem)
    new = q.residual(prob) if q.status == "ok" else math.inf
    return {"point": q, "residual_old": old, "residual_new": new,
            "growth": new / max(old, floor), "status": q.status}


def sign_sweep(problem: BalanceProblem, n: int = 9) -> dict:
    """``y₂`` along ``β₂ ∈ [−a₀λ₁₀, a₀λ₁₀]`` with ``d = 0`` (``m = 2``); counts sign changes."""
    if problem.m != 2:
        raise ConfigError("sign_sweep is defined for m = 2")
    betas = np.linspace(-problem.beta_max, problem.beta_max, n)
    zero = tuple((0.0,) * problem.d for _ in range(problem.m))
    pts = evaluate_many([SearchPoint((float(b),), zero, index=i) for i, b in enumerate(betas)], problem)
    y = np.array([p.endpoint.y[0] if p.status == "ok" else np.nan for p in pts])
    s = np.sign(y[np.isfinite(y)])
    changes = int(np.count_nonzero(s[1:] != s[:-1]))
    return {"beta": betas, "y2": y, "sign_changes": changes}
