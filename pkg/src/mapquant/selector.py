"""Point selection as a quadratic program over the capped simplex.

Minimise ``v' K v - tau * d' v`` subject to ``sum(v) = 1`` and
``0 <= v_i <= 1 / (alpha * m)``, where K holds pairwise Euclidean distances
between the m points and d_i is the fraction of cameras observing point i.
The points with non-negligible mass in the minimiser are kept.

With a Euclidean distance matrix the objective is concave on the feasible
plane, so minimisers sit at vertices of the polytope and plain projected
gradient only finds local ones; :func:`solve_selection` therefore restarts
from several feasible points and keeps the best.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError

SUPPORT_EPS = 1e-8
DEFAULT_TAU = 1.0
# dense K beyond this many points needs an explicit override (~3.2 GB at float64)
MAX_DENSE_POINTS = 20_000

_ROW_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class SelectionProblem:
    dist: np.ndarray
    distinct: np.ndarray
    tau: float = DEFAULT_TAU
    alpha: float = 1.0
    # False when `dist` is a similarity kernel rather than a metric (skips metric checks)
    metric: bool = True

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=np.float64)
        distinct = np.asarray(self.distinct, dtype=np.float64)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "distinct", distinct)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "alpha", float(self.alpha))
        self.validate()

    @property
    def m(self) -> int:
        return self.distinct.shape[0]

    @property
    def cap(self) -> float:
        return 1.0 / (self.alpha * self.m)

    def validate(self, n_triples: int = 1000, seed: int = 0):
        dist, d, m = self.dist, self.distinct, self.distinct.shape[0] if self.distinct.ndim == 1 else -1
        if d.ndim != 1 or m < 1:
            raise DataError(f"distinctiveness must be a non-empty vector, got shape {d.shape}")
        if dist.shape != (m, m):
            raise DataError(f"distance matrix must be {m}x{m}, got {dist.shape}")
        if not (np.all(np.isfinite(dist)) and np.all(np.isfinite(d))):
            raise DataError("selection problem contains non-finite values")
        if np.any(d < 0) or np.any(d > 1):
            raise DataError("distinctiveness entries must lie in [0, 1]")
        if not 0 < self.alpha <= 1:
            raise DataError(f"alpha must be in (0, 1], got {self.alpha}")
        if not self.tau >= 0:
            raise DataError(f"tau must be >= 0, got {self.tau}")
        if not np.allclose(dist, dist.T, rtol=0, atol=1e-12):
            raise DataError("distance matrix is not symmetric")
        if not self.metric:
            return
        if np.any(np.diag(dist) != 0):
            raise DataError("distance matrix must have a zero diagonal")
        if np.any(dist < 0):
            raise DataError("distance matrix has negative entries")
        rng = np.random.default_rng(seed)
        i, j, k = rng.integers(m, size=(3, n_triples))
        if np.any(dist[i, k] > dist[i, j] + dist[j, k] + 1e-9):
            raise DataError("distance matrix violates the triangle inequality")


@dataclass
class SelectionSolution:
    v: np.ndarray
    support: np.ndarray
    objective: float
    iterations: int
    converged: bool
    start: int = 0
    # final objective of every start, in start order
    start_objectives: list[float] = field(default_factory=list)


@dataclass
class SolverOptions:
    tol: float = 1e-9
    max_iters: int = 10_000
    n_starts: int = 16
    seed: int = 0
    support_eps: float = SUPPORT_EPS
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60


def pairwise_distance_matrix(positions) -> np.ndarray:
    """Euclidean distances between all pairs of points.

    Entry (i, j) is computed from p_i - p_j, which is the exact negation of
    p_j - p_i, so the result is exactly symmetric with an exactly zero diagonal.
    """
    P = np.asarray(positions, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape[0] < 1:
        raise DataError(f"positions must have shape (m, 3) with m >= 1, got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise DataError("positions contain non-finite values")
    m = P.shape[0]
    out = np.empty((m, m), dtype=np.float64)
    for start in range(0, m, _ROW_CHUNK):
        diff = P[start:start + _ROW_CHUNK, None, :] - P[None, :, :]
        np.sqrt(np.einsum("ijk,ijk->ij", diff, diff), out=out[start:start + _ROW_CHUNK])
    return out


def rbf_kernel(dist: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-D^2 / (2 sigma^2)). Not part of the distance formulation; opt-in only."""
    if not sigma > 0:
        raise DataError(f"rbf sigma must be positive, got {sigma}")
    return np.exp(-(dist * dist) / (2.0 * sigma * sigma))


def parse_kernel(spec: str):
    """``"euclidean"`` -> None, ``"rbf:<sigma>"`` -> sigma."""
    if spec in (None, "", "euclidean"):
        return None
    name, _, arg = spec.partition(":")
    if name == "rbf":
        try:
            return float(arg)
        except ValueError:
            pass
    raise DataError(f"unknown kernel {spec!r}; expected 'euclidean' or 'rbf:<sigma>'")


def distinctiveness(scene) -> np.ndarray:
    """Fraction of the map's cameras observing each point."""
    return scene.observation_counts.astype(np.float64) / scene.num_cameras


def problem_from_map(scene, alpha: float, tau: float = DEFAULT_TAU, kernel: str = "euclidean",
                     force: bool = False) -> SelectionProblem:
    if len(scene) == 0:
        raise DataError("cannot select from an empty map")
    if len(scene) > MAX_DENSE_POINTS and not force:
        raise DataError(
            f"{len(scene)} points exceed the dense-matrix limit of {MAX_DENSE_POINTS}; pass force to override"
        )
    dist = pairwise_distance_matrix(scene.positions)
    sigma = parse_kernel(kernel)
    if sigma is not None:
        return SelectionProblem(rbf_kernel(dist, sigma), distinctiveness(scene), tau, alpha, metric=False)
    return SelectionProblem(dist, distinctiveness(scene), tau, alpha)


def _clamped_sum(w, theta, cap):
    return np.clip(w - theta, 0.0, cap).sum()


def project_capped_simplex(w, cap: float) -> np.ndarray:
    """Euclidean projection onto {v : sum(v) = 1, 0 <= v <= cap}.

    The answer is clip(w - theta, 0, cap) for the theta where the clipped sum
    equals one. That sum is piecewise linear and non-increasing in theta with
    kinks at w_i and w_i - cap, so theta is bracketed by bisection over the
    sorted kinks and then solved exactly on the linear piece between them.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] < 1:
        raise DataError(f"expected a non-empty vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DataError("cannot project a non-finite vector")
    m = w.shape[0]
    if cap * m < 1 - 1e-12:
        raise DataError(f"infeasible cap: cap*m = {cap * m} < 1")
    if cap * m <= 1 + 1e-12:
        # the feasible set is the single uniform point
        return np.full(m, 1.0 / m)

    kinks = np.unique(np.concatenate([w, w - cap]))
    # clamped sum is m*cap >= 1 at kinks[0] and 0 at kinks[-1]
    lo, hi = 0, kinks.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _clamped_sum(w, kinks[mid], cap) >= 1.0:
            lo = mid
        else:
            hi = mid
    t_lo, t_hi = kinks[lo], kinks[hi]
    s_lo = _clamped_sum(w, t_lo, cap)
    if s_lo == 1.0:
        theta = t_lo
    else:
        # on (t_lo, t_hi) each coordinate is either fixed (0 or cap) or free (w_i - theta)
        mid = 0.5 * (t_lo + t_hi)
        free = (w - mid > 0) & (w - mid < cap)
        capped = w - mid >= cap
        n_free = int(free.sum())
        if n_free == 0:
            theta = t_lo
        else:
            theta = (w[free].sum() + cap * capped.sum() - 1.0) / n_free
            theta = min(max(theta, t_lo), t_hi)
    return np.clip(w - theta, 0.0, cap)


def support(v, eps: float = SUPPORT_EPS) -> np.ndarray:
    """Indices with v_i > eps."""
    return np.flatnonzero(np.asarray(v) > eps)


def objective(K: np.ndarray, d: np.ndarray, tau: float, v: np.ndarray) -> float:
    return float(v @ (K @ v) - tau * (d @ v))


def initial_step(K: np.ndarray, tau: float) -> float:
    return 1.0 / (2.0 * float(np.abs(K).sum(axis=1).max()) + tau + 1.0)


def pgd(K, d, tau, cap, v0, opts: SolverOptions, history: list | None = None):
    """Projected gradient with Armijo backtracking from one feasible start.

    The first trial step is :func:`initial_step`; afterwards each iteration
    starts its line search from twice the previously accepted step.
    Returns ``(v, objective, iterations, converged)``.
    """
    v = project_capped_simplex(v0, cap)
    Kv = K @ v
    f = float(v @ Kv - tau * (d @ v))
    if not math.isfinite(f):
        raise NumericalError("non-finite objective at iteration 0")
    eta = initial_step(K, tau)
    if history is not None:
        history.append(f)
    for it in range(1, opts.max_iters + 1):
        g = 2.0 * Kv - tau * d
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at iteration {it}")
        for _ in range(opts.max_backtracks):
            v_new = project_capped_simplex(v - eta * g, cap)
            Kv_new = K @ v_new
            f_new = float(v_new @ Kv_new - tau * (d @ v_new))
            if not math.isfinite(f_new):
                raise NumericalError(f"non-finite objective at iteration {it}")
            if f_new <= f + opts.armijo * float(g @ (v_new - v)):
                break
            eta *= opts.backtrack
        else:
            # no acceptable step: v is stationary to working precision
            return v, f, it, True
        step = float(np.max(np.abs(v_new - v)))
        v, Kv, f = v_new, Kv_new, f_new
        if history is not None:
            history.append(f)
        if step < opts.tol:
            return v, f, it, True
        eta *= 2.0
    return v, f, opts.max_iters, False


def feasible_starts(m: int, cap: float, n_starts: int, seed: int) -> list[np.ndarray]:
    """Uniform vector, then ``n_starts - 1`` seeded random draws projected onto the feasible set."""
    rng = np.random.default_rng(seed)
    starts = [np.full(m, 1.0 / m)]
    for _ in range(n_starts - 1):
        starts.append(project_capped_simplex(rng.random(m), cap))
    return starts


def solve_selection(problem: SelectionProblem, opts: SolverOptions | None = None) -> SelectionSolution:
    """Multi-start projected gradient descent.

    The best start is chosen by (objective, start index), so the result does
    not depend on the order starts finish in.
    """
    opts = opts or SolverOptions()
    if opts.n_starts < 1:
        raise DataError(f"n_starts must be >= 1, got {opts.n_starts}")
    if opts.max_iters < 1:
        raise DataError(f"max_iters must be >= 1, got {opts.max_iters}")
    K = 0.5 * (problem.dist + problem.dist.T)
    d, tau, cap, m = problem.distinct, problem.tau, problem.cap, problem.m

    runs = [pgd(K, d, tau, cap, v0, opts) for v0 in feasible_starts(m, cap, opts.n_starts, opts.seed)]
    objectives = [r[1] for r in runs]
    best = min(range(len(runs)), key=lambda i: (objectives[i], i))
    v, f, iters, converged = runs[best]
    return SelectionSolution(
        v=v,
        support=support(v, opts.support_eps),
        objective=f,
        iterations=iters,
        converged=converged,
        start=best,
        start_objectives=objectives,
    )
