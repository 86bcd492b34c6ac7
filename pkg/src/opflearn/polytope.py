"""Halfspace polytopes of load profiles and hit-and-run sampling inside them.

A polytope is the set ``{x : A x <= b}``.  The initial input space bounds
each active load by its relaxed maximum, keeps reactive loads between zero
and the active load (power factor at least 1/sqrt(2)), and caps total active
load by total generation capacity.  Infeasibility certificates are appended
as further rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nlp
from .errors import EmptyPolytope, StuckSampler, Unbounded

try:
    from ._walk import walk as _walk_kernel
    KERNEL = "cython"
except ImportError:  # pragma: no cover - depends on the build
    from ._walk_py import walk as _walk_kernel
    KERNEL = "numpy"

INITIAL, CERTIFICATE = "initial", "certificate"

LP_CONFIG = nlp.NlpConfig(tol=1e-10, mu_min=1e-12, max_iter=200)


@dataclass
class HalfspacePolytope:
    A: np.ndarray
    b: np.ndarray
    tags: list = field(default_factory=list)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if len(self.A) != len(self.b):
            raise ValueError("A and b row counts differ")
        if not self.tags:
            self.tags = [INITIAL] * len(self.b)
        if np.any(np.linalg.norm(self.A, axis=1) == 0):
            raise ValueError("zero row normal")

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return len(self.b)

    def slacks(self, x) -> np.ndarray:
        return self.b - self.A @ np.asarray(x, dtype=float)


def init_input_space(p_bar, total_pg_max: float) -> HalfspacePolytope:
    """Rows ``p <= p_bar``, ``-p <= 0``, ``-q <= 0``, ``q - p <= 0``, ``1^T p <= total``."""
    p_bar = np.asarray(p_bar, dtype=float)
    if not (np.all(np.isfinite(p_bar)) and np.all(p_bar > 0)):
        raise ValueError("p_bar must be finite and positive")
    L = len(p_bar)
    I, Z = np.eye(L), np.zeros((L, L))
    A = np.vstack([
        np.hstack([I, Z]),
        np.hstack([-I, Z]),
        np.hstack([Z, -I]),
        np.hstack([-I, I]),
        np.hstack([np.ones((1, L)), np.zeros((1, L))]),
    ])
    b = np.concatenate([p_bar, np.zeros(3 * L), [float(total_pg_max)]])
    return HalfspacePolytope(A, b)


def contains(P: HalfspacePolytope, x, slack_tol: float = 0.0) -> bool:
    return bool(np.all(P.A @ np.asarray(x, dtype=float) <= P.b + slack_tol))


def add_halfspace(P: HalfspacePolytope, x_hat, x_star) -> HalfspacePolytope:
    """Append the separating row ``n^T x <= n^T x_star`` with ``n = x_hat - x_star``."""
    x_hat = np.asarray(x_hat, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    n = x_hat - x_star
    if not np.any(n):
        raise ValueError("x_hat equals x_star; no hyperplane")
    return HalfspacePolytope(np.vstack([P.A, n]), np.append(P.b, n @ x_star),
                             P.tags + [CERTIFICATE])


def chebyshev_center(P: HalfspacePolytope, config: nlp.NlpConfig | None = None):
    """Centre and radius of the largest ball inside ``P`` (LP solved by nlp)."""
    d = P.dim
    norms = np.linalg.norm(P.A, axis=1)
    An, bn = P.A / norms[:, None], P.b / norms
    k = len(bn)
    J = np.hstack([An, np.ones((k, 1))])
    c = np.zeros(d + 1)
    c[-1] = -1.0

    prob = nlp.NlpProblem(
        n=d + 1,
        xl=np.append(np.full(d, -np.inf), 0.0),
        xu=np.full(d + 1, np.inf),
        gl=np.full(k, -np.inf), gu=bn,
        objective=lambda v: float(c @ v),
        gradient=lambda v: c,
        constraints=lambda v: J @ v,
        jacobian=lambda v: J,
        hessian=lambda v, lam, of: np.zeros((d + 1, d + 1)),
        convex=True,
    )
    # a feasible-ish start: least-squares point of the row midplanes
    x0 = np.append(np.linalg.lstsq(An, bn - 1.0, rcond=None)[0], 1e-3)
    sol = nlp.solve(prob, config or LP_CONFIG, x0)
    if sol.status == nlp.LOCALLY_INFEASIBLE:
        raise EmptyPolytope("polytope has no feasible point")
    if not sol.ok:
        if np.max(np.abs(sol.x)) > 1e8:
            raise Unbounded("polytope is unbounded")
        raise EmptyPolytope(f"Chebyshev LP failed: {sol.status} {sol.message}")
    # report the radius the returned centre actually supports
    c = sol.x[:d].copy()
    r = max(float(np.min(bn - An @ c)), 0.0)
    return c, r


@dataclass
class SamplerState:
    x: np.ndarray
    rng: np.random.Generator
    steps: int = 0

    @classmethod
    def start(cls, x, seed) -> "SamplerState":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(np.array(x, dtype=float), rng)


def chord(P: HalfspacePolytope, x, u):
    """Interval ``(t_lo, t_hi)`` of steps keeping ``x + t u`` inside ``P``."""
    u = np.asarray(u, dtype=float)
    res = P.slacks(x)
    Au = P.A @ u
    pos, neg = Au > 0, Au < 0
    t_hi = float(np.min(res[pos] / Au[pos])) if pos.any() else np.inf
    t_lo = float(np.max(res[neg] / Au[neg])) if neg.any() else -np.inf
    return t_lo, t_hi


def default_thinning(d: int) -> tuple[int, int]:
    """``(thin, burn_in)`` used by the pipeline."""
    return max(10, d), 10 * d


def _advance(P, state, n_steps, thin, kernel):
    """Run ``n_steps`` steps; return the points after every ``thin``-th step."""
    A = np.ascontiguousarray(P.A)
    b = np.ascontiguousarray(P.b)
    d = P.dim
    out = np.empty((n_steps // thin if thin > 0 else 0, d))
    got = done = retries = 0
    while done < n_steps:
        todo = n_steps - done
        dirs = state.rng.standard_normal((todo, d))
        unif = state.rng.random(todo)
        steps, code, n_out = kernel(A, b, state.x, dirs, unif, thin, out[got:], done)
        got += n_out
        done += steps
        state.steps += steps
        if steps:
            retries = 0
        if code == 2:
            raise Unbounded("hit-and-run chord is unbounded; polytope has no capacity row")
        if code == 1:
            # degenerate chord: redraw the remaining directions
            retries += 1
            if retries > 100:
                raise StuckSampler("degenerate chords in 100 consecutive retries")
    return out[:got]


def hit_and_run_step(P: HalfspacePolytope, state: SamplerState, kernel=None):
    """One hit-and-run move; returns ``(new_point, state)``."""
    _advance(P, state, 1, 1, kernel or _walk_kernel)
    return state.x.copy(), state


def walk(P: HalfspacePolytope, state: SamplerState, n_samples: int, thin: int | None = None,
         burn_in: int = 0, kernel=None) -> np.ndarray:
    """``n_samples`` thinned points after ``burn_in`` unrecorded steps."""
    if not contains(P, state.x):
        raise ValueError("sampler point is outside the polytope")
    kern = kernel or _walk_kernel
    if thin is None:
        thin = default_thinning(P.dim)[0]
    if burn_in:
        _advance(P, state, burn_in, 0, kern)
    if n_samples <= 0:
        return np.empty((0, P.dim))
    return _advance(P, state, n_samples * thin, thin, kern)
