"""Primal-dual interior-point solver for smooth constrained problems.

Problems have the form::

    min f(x)  s.t.  gl <= g(x) <= gu,  xl <= x <= xu

Rows with ``gl == gu`` are equalities.  Every inequality row gets a slack
``s`` with ``g(x) - s = 0`` and ``gl <= s <= gu``, so all inequalities end up
as simple bounds handled by a logarithmic barrier.  The Newton system is the
symmetric indefinite augmented KKT matrix, factorized densely with LAPACK
``sytrf``; its inertia drives the primal regularization.  Step acceptance uses
backtracking on the l1 exact-penalty merit function, measured against the
worst of the last few merit values (nonmonotone) and with one second-order
correction per iteration to avoid the Maratos effect.  After repeated short
steps a watchdog takes a few full steps tentatively and returns to the saved
iterate if the merit has not improved.  When the line search
stalls away from feasibility, a restoration phase minimizes the l1
constraint violation; a strictly positive minimum there is reported as local
infeasibility.

Sign convention of the returned multipliers: ``lam[i] > 0`` when row ``i``
sits at its upper bound, ``lam[i] < 0`` at its lower bound, so that at a
solution ``grad f + J^T lam - zl + zu = 0`` with ``zl, zu >= 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import lapack

logger = logging.getLogger(__name__)

OPTIMAL = "Optimal"
LOCALLY_INFEASIBLE = "LocallyInfeasible"
ITERATION_LIMIT = "IterationLimit"
NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class NlpProblem:
    """Callback bundle describing one problem instance.

    ``jacobian`` returns a dense ``(m, n)`` array and ``hessian(x, lam,
    obj_factor)`` the dense symmetric Hessian of
    ``obj_factor * f + lam @ g``.
    """

    n: int
    xl: np.ndarray
    xu: np.ndarray
    gl: np.ndarray
    gu: np.ndarray
    objective: Callable
    gradient: Callable
    constraints: Callable
    jacobian: Callable
    hessian: Callable
    convex: bool = False

    @property
    def m(self) -> int:
        return len(self.gl)

    @property
    def m_eq(self) -> int:
        return int(np.sum(self.gl == self.gu))

    @property
    def m_ineq(self) -> int:
        return self.m - self.m_eq


@dataclass
class NlpConfig:
    tol: float = 1e-6
    max_iter: int = 300
    mu_init: float = 0.1
    mu_min: float = 1e-9
    mu_linear: float = 0.2
    mu_superlinear: float = 1.5
    kappa_eps: float = 10.0
    tau_min: float = 0.99
    bound_push: float = 1e-2
    bound_relax: float = 1e-8       # relative widening of finite bounds
    delta_w_init: float = 1e-4
    delta_w_min: float = 1e-12
    delta_w_floor: float = 0.0      # fixed primal damping, for flat objectives
    delta_w_max: float = 1e4
    delta_w_growth: float = 10.0
    armijo: float = 1e-4
    backtrack: float = 0.5
    alpha_min: float = 1e-10
    kappa_sigma: float = 1e10
    restoration: bool = True
    max_restorations: int = 3
    nonmonotone: int = 5
    watchdog: int = 3               # tentative full steps after repeated short ones
    infeasibility_tol: float | None = None  # default: 10 * tol

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class NlpSolution:
    x: np.ndarray
    lam: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    lam_lower: np.ndarray
    lam_upper: np.ndarray
    status: str
    objective: float
    constr_viol: float
    kkt_error: float
    iterations: int
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Singular(Exception):
    pass


def _factor(K: np.ndarray, n_pos: int):
    """LDL^T factorization; returns (factors, inertia_ok, singular)."""
    ldu, ipiv, info = lapack.dsytrf(K, lower=1)
    if info < 0:
        raise _Singular
    dim = K.shape[0]
    pos = neg = zero = 0
    k = 0
    eps = 1e-300
    while k < dim:
        if ipiv[k] > 0:
            d = ldu[k, k]
            if abs(d) <= eps:
                zero += 1
            elif d > 0:
                pos += 1
            else:
                neg += 1
            k += 1
        else:
            a, b, c = ldu[k, k], ldu[k + 1, k], ldu[k + 1, k + 1]
            det = a * c - b * b
            if abs(det) <= eps:
                zero += 1
                if a + c > 0:
                    pos += 1
                else:
                    neg += 1
            elif det < 0:
                pos += 1
                neg += 1
            elif a + c > 0:
                pos += 2
            else:
                neg += 2
            k += 2
    singular = zero > 0 or info > 0
    return (ldu, ipiv), (pos == n_pos and neg == dim - n_pos and not singular), singular


def _solve(factors, rhs):
    ldu, ipiv = factors
    x, info = lapack.dsytrs(ldu, ipiv, rhs, lower=1)
    if info != 0:
        raise _Singular
    return x


class _Barrier:
    """Internal reformulation: variables w = (x_free, s)."""

    def __init__(self, prob: NlpProblem, relax: float = 0.0):
        self.prob = prob
        xl = np.asarray(prob.xl, dtype=float)
        xu = np.asarray(prob.xu, dtype=float)
        gl = np.asarray(prob.gl, dtype=float)
        gu = np.asarray(prob.gu, dtype=float)
        if np.any(xl > xu) or np.any(gl > gu):
            raise ValueError("inconsistent bounds")
        self.fixed = xl == xu
        self.free = np.flatnonzero(~self.fixed)
        self.eq = np.flatnonzero(gl == gu)
        self.ineq = np.flatnonzero(gl < gu)
        self.nf = len(self.free)
        self.ns = len(self.ineq)
        self.nw = self.nf + self.ns
        self.m = prob.m
        lo = np.concatenate([xl[self.free], gl[self.ineq]])
        hi = np.concatenate([xu[self.free], gu[self.ineq]])
        # widen finite bounds slightly so a bound that an equality pins still has an interior
        self.lo = lo - relax * np.maximum(1.0, np.abs(np.where(np.isfinite(lo), lo, 0.0)))
        self.hi = hi + relax * np.maximum(1.0, np.abs(np.where(np.isfinite(hi), hi, 0.0)))
        self.has_lo = np.isfinite(self.lo)
        self.has_hi = np.isfinite(self.hi)
        self.x_fixed = xl.copy()
        self.rhs_eq = gl[self.eq]

    def x_of(self, w):
        x = self.x_fixed.copy()
        x[self.free] = w[: self.nf]
        return x

    def cons(self, x, w, g=None):
        if g is None:
            g = self.prob.constraints(x)
        c = np.empty(self.m)
        c[self.eq] = g[self.eq] - self.rhs_eq
        c[self.ineq] = g[self.ineq] - w[self.nf:]
        return c

    def jac(self, x):
        Jx = np.atleast_2d(self.prob.jacobian(x)).reshape(self.m, self.prob.n)
        J = np.zeros((self.m, self.nw))
        J[:, : self.nf] = Jx[:, self.free]
        J[self.ineq, self.nf + np.arange(self.ns)] = -1.0
        return J, Jx

    def grad(self, x):
        gx = np.asarray(self.prob.gradient(x), dtype=float)
        return np.concatenate([gx[self.free], np.zeros(self.ns)]), gx

    def hess(self, x, lam, obj_factor=1.0):
        H = np.asarray(self.prob.hessian(x, lam, obj_factor), dtype=float)
        W = np.zeros((self.nw, self.nw))
        W[: self.nf, : self.nf] = H[np.ix_(self.free, self.free)]
        return W

    def push_inside(self, w, kappa):
        """Move ``w`` strictly inside its bounds."""
        w = w.copy()
        lo, hi = self.lo, self.hi
        rng = np.where(self.has_lo & self.has_hi, hi - lo, np.inf)
        pl = np.minimum(kappa * np.maximum(1.0, np.abs(lo)), kappa * rng)
        pu = np.minimum(kappa * np.maximum(1.0, np.abs(hi)), kappa * rng)
        pl = np.where(self.has_lo, pl, 0.0)
        pu = np.where(self.has_hi, pu, 0.0)
        w = np.where(self.has_lo, np.maximum(w, lo + pl), w)
        w = np.where(self.has_hi, np.minimum(w, hi - pu), w)
        both = self.has_lo & self.has_hi & (w <= lo) | self.has_lo & self.has_hi & (w >= hi)
        w[both] = 0.5 * (lo[both] + hi[both])
        return w

    def slacks(self, w):
        dl = np.where(self.has_lo, w - self.lo, 1.0)
        du = np.where(self.has_hi, self.hi - w, 1.0)
        return dl, du


def solve(problem: NlpProblem, config: NlpConfig | None = None, x0=None) -> NlpSolution:
    """Solve ``problem`` from ``x0`` (projected strictly inside the bounds)."""
    cfg = config or NlpConfig()
    bar = _Barrier(problem, cfg.bound_relax)
    if x0 is None:
        x0 = np.zeros(problem.n)
    x0 = np.asarray(x0, dtype=float).copy()
    x0[bar.fixed] = bar.x_fixed[bar.fixed]
    return _ipm(bar, cfg, x0, depth=0)


def _ipm(bar: _Barrier, cfg: NlpConfig, x0, depth, lam0=None, mu0=None, iter_offset=0):
    prob = bar.prob
    x = x0.copy()
    g0 = np.asarray(prob.constraints(x), dtype=float)
    w = np.concatenate([x[bar.free], g0[bar.ineq]])
    w = bar.push_inside(w, cfg.bound_push)
    x = bar.x_of(w)

    mu = cfg.mu_init if mu0 is None else mu0
    dl, du = bar.slacks(w)
    zl = np.where(bar.has_lo, mu / dl, 0.0)
    zu = np.where(bar.has_hi, mu / du, 0.0)
    lam = np.zeros(bar.m) if lam0 is None else lam0.copy()
    nu = 1.0
    delta_w_last = 0.0
    tau = max(cfg.tau_min, 1.0 - mu)
    restorations = 0
    hist = []  # (barrier value, ||c||_1) of recent iterates at the current mu
    hist_mu = None
    n_short = 0
    watch = None        # saved iterate while tentative full steps are tried
    watch_block = 0     # no new watchdog before this iteration
    infeas_tol = cfg.infeasibility_tol if cfg.infeasibility_tol is not None else 10 * cfg.tol

    f = prob.objective(x)
    gfull = np.asarray(prob.constraints(x), dtype=float)
    c = bar.cons(x, w, gfull)
    status = ITERATION_LIMIT
    message = ""
    it = 0
    kkt = np.inf
    for it in range(cfg.max_iter + 1):
        gw, gx = bar.grad(x)
        J, Jx = bar.jac(x)
        dl, du = bar.slacks(w)

        def errors(mu_):
            rd = gw + J.T @ lam - zl + zu
            rcl = np.where(bar.has_lo, zl * dl - mu_, 0.0)
            rcu = np.where(bar.has_hi, zu * du - mu_, 0.0)
            return (np.max(np.abs(rd), initial=0.0), np.max(np.abs(c), initial=0.0),
                    max(np.max(np.abs(rcl), initial=0.0), np.max(np.abs(rcu), initial=0.0)))

        ed, ep, ec = errors(0.0)
        kkt = max(ed, ep, ec)
        if not np.isfinite(kkt):
            status, message = NUMERICAL_FAILURE, "non-finite iterate"
            break
        # barrier update (possibly several times per iteration)
        centered = max(errors(mu)) <= cfg.kappa_eps * mu
        while centered and mu > cfg.mu_min:
            mu = max(cfg.mu_min, min(cfg.mu_linear * mu, mu ** cfg.mu_superlinear))
            tau = max(cfg.tau_min, 1.0 - mu)
            centered = max(errors(mu)) <= cfg.kappa_eps * mu
        # stop only once the subproblem at the smallest barrier is solved
        if kkt <= cfg.tol and mu <= cfg.mu_min and centered:
            status = OPTIMAL
            break
        if it == cfg.max_iter:
            break

        # -- Newton step on the augmented system --
        sig = np.where(bar.has_lo, zl / dl, 0.0) + np.where(bar.has_hi, zu / du, 0.0)
        W = bar.hess(x, lam, 1.0)
        grad_phi = gw - np.where(bar.has_lo, mu / dl, 0.0) + np.where(bar.has_hi, mu / du, 0.0)
        nw, m = bar.nw, bar.m
        K = np.zeros((nw + m, nw + m))
        K[:nw, :nw] = W + np.diag(sig)
        K[nw:, :nw] = J
        K[:nw, nw:] = J.T
        rhs = -np.concatenate([grad_phi, c])
        step = None
        delta_w, delta_c = cfg.delta_w_floor, 0.0
        try:
            for _ in range(60):
                Kd = K.copy()
                if delta_w:
                    Kd[np.arange(nw), np.arange(nw)] += delta_w
                if delta_c:
                    Kd[nw + np.arange(m), nw + np.arange(m)] -= delta_c
                factors, good, singular = _factor(Kd, nw)
                if good:
                    step = _refine(factors, Kd, rhs)
                    if np.all(np.isfinite(step)):
                        break
                    step = None
                if singular and delta_c == 0.0 and m > 0:
                    delta_c = 1e-8 * mu ** 0.25
                    continue
                if delta_w <= cfg.delta_w_floor:
                    delta_w = cfg.delta_w_init if delta_w_last <= cfg.delta_w_floor else max(cfg.delta_w_min, delta_w_last / 3)
                    delta_w = max(delta_w, 10 * cfg.delta_w_floor)
                else:
                    delta_w *= cfg.delta_w_growth
                if delta_w > cfg.delta_w_max:
                    break
        except _Singular:
            step = None
        if step is None:
            status, message = NUMERICAL_FAILURE, "KKT system could not be regularized"
            break
        delta_w_last = delta_w
        dw = step[:nw]
        lam_plus = step[nw:]
        dlam = lam_plus - lam
        dzl = np.where(bar.has_lo, mu / dl - zl - zl / dl * dw, 0.0)
        dzu = np.where(bar.has_hi, mu / du - zu + zu / du * dw, 0.0)

        # fraction to the boundary
        alpha_max = _max_step(np.where(bar.has_lo, dl, np.inf), dw, tau)
        alpha_max = min(alpha_max, _max_step(np.where(bar.has_hi, du, np.inf), -dw, tau))
        alpha_z = min(_max_step(np.where(bar.has_lo, zl, np.inf), dzl, tau),
                      _max_step(np.where(bar.has_hi, zu, np.inf), dzu, tau))

        # merit: phi + nu * ||c||_1
        c1 = np.sum(np.abs(c))
        dphi = grad_phi @ dw
        if c1 > 0:
            curv = dw @ (K[:nw, :nw] @ dw)
            need = (dphi + 0.5 * max(curv, 0.0)) / (0.9 * c1)
            if nu < need:
                nu = need + 1.0
        D = dphi - nu * c1

        phi0 = _barrier_value(f, w, bar, mu)
        force = False
        if watch is not None:
            ref = _barrier_value(watch[2], watch[0], bar, mu) + nu * np.sum(np.abs(watch[3]))
            if phi0 + nu * c1 < ref:
                watch = None
            elif watch[7] >= cfg.watchdog:
                # the full steps did not pay off: go back and backtrack from there
                w, x, f, c, lam, zl, zu = (v.copy() if isinstance(v, np.ndarray) else v for v in watch[:7])
                watch, n_short, watch_block = None, 0, it + 5
                hist = []
                continue
            else:
                watch[7] += 1
                force = True
        elif n_short >= 2 and it >= watch_block and cfg.watchdog > 0:
            watch = [w.copy(), x.copy(), f, c.copy(), lam.copy(), zl.copy(), zu.copy(), 1]
            force = True
        if hist_mu != mu:
            hist, hist_mu = [], mu
        hist.append((phi0, c1))
        del hist[:-cfg.nonmonotone]
        # nonmonotone reference: the worst merit among recent iterates
        merit0 = max(p + nu * v for p, v in hist)
        alpha = alpha_max
        accepted = False
        slack_tol = 1e-14 * abs(merit0)
        first = True
        while alpha >= cfg.alpha_min:
            w_t, x_t, f_t, c_t = _trial(bar, w, alpha * dw, dl, du, mu, nu)
            merit_t = _barrier_value(f_t, w_t, bar, mu) + nu * np.sum(np.abs(c_t))
            if force and np.all(np.isfinite(c_t)) and np.isfinite(merit_t):
                accepted = True
                break
            if np.isfinite(merit_t) and merit_t <= merit0 + cfg.armijo * alpha * min(D, 0.0) + slack_tol:
                accepted = True
                break
            if first and m > 0 and np.all(np.isfinite(c_t)):
                # second-order correction against the Maratos effect
                first = False
                try:
                    corr = _solve(factors, -np.concatenate([np.zeros(nw), c_t]))[:nw]
                except _Singular:
                    corr = None
                if corr is not None and np.all(np.isfinite(corr)):
                    d_soc = alpha * dw + corr
                    a_soc = min(_max_step(np.where(bar.has_lo, dl, np.inf), d_soc, tau),
                                _max_step(np.where(bar.has_hi, du, np.inf), -d_soc, tau))
                    if a_soc >= 1.0:
                        w_s, x_s, f_s, c_s = _trial(bar, w, d_soc, dl, du, mu, nu)
                        merit_s = _barrier_value(f_s, w_s, bar, mu) + nu * np.sum(np.abs(c_s))
                        if np.isfinite(merit_s) and merit_s <= merit0 + cfg.armijo * alpha * min(D, 0.0) + slack_tol:
                            w_t, x_t, f_t, c_t = w_s, x_s, f_s, c_s
                            accepted = True
                            break
            first = False
            alpha *= cfg.backtrack

        if not accepted:
            if ep > infeas_tol and cfg.restoration and depth == 0 and restorations < cfg.max_restorations:
                restorations += 1
                res = _restore(bar, cfg, x, mu)
                if res is None:
                    status, message = NUMERICAL_FAILURE, "restoration failed"
                    break
                x_r, viol = res
                if viol > infeas_tol:
                    x = x_r
                    status, message = LOCALLY_INFEASIBLE, f"restoration converged to infeasibility {viol:.3e}"
                    w = np.concatenate([x[bar.free], np.asarray(prob.constraints(x))[bar.ineq]])
                    break
                # resume from the restored point
                g_r = np.asarray(prob.constraints(x_r), dtype=float)
                w = bar.push_inside(np.concatenate([x_r[bar.free], g_r[bar.ineq]]), 1e-8)
                x = bar.x_of(w)
                dl, du = bar.slacks(w)
                zl = np.where(bar.has_lo, mu / dl, 0.0)
                zu = np.where(bar.has_hi, mu / du, 0.0)
                lam = np.zeros(bar.m)
                nu = 1.0
                f = prob.objective(x)
                c = bar.cons(x, w)
                continue
            if ep <= infeas_tol:
                # tiny steps near a feasible point: accept a short step anyway
                alpha = max(alpha, cfg.alpha_min)
                w_t, x_t, f_t, c_t = _trial(bar, w, alpha * dw, dl, du, mu, nu)
            else:
                status, message = NUMERICAL_FAILURE, "line search failed"
                break

        logger.debug("it %3d mu %.1e kkt %.2e (d %.1e p %.1e c %.1e) alpha %.2e az %.2e nu %.1e dw %.1e",
                     it, mu, kkt, ed, ep, ec, alpha, alpha_z, nu, delta_w)
        w, x, f, c = w_t, x_t, f_t, c_t
        n_short = n_short + 1 if alpha < 0.5 * alpha_max else 0
        lam = lam + alpha * dlam
        zl = zl + alpha_z * dzl
        zu = zu + alpha_z * dzu
        # keep primal-dual products within a factor of mu
        dl, du = bar.slacks(w)
        ks = cfg.kappa_sigma
        zl = np.where(bar.has_lo, np.clip(zl, mu / (ks * dl), ks * mu / dl), 0.0)
        zu = np.where(bar.has_hi, np.clip(zu, mu / (ks * du), ks * mu / du), 0.0)

    return _finish(bar, x, w, lam, zl, zu, status, kkt, it + iter_offset, message)


def _trial(bar, w, d, dl, du, mu, nu):
    """Trial point ``w + d`` with inequality slacks reset toward ``g(x)``.

    Per row the slack is either the linear step or its row value (kept a
    margin away from the bounds), whichever gives the smaller barrier plus
    penalty term, so inactive nonlinear rows add no violation to the merit.
    """
    w_t = w + d
    x_t = bar.x_of(w_t)
    g = np.asarray(bar.prob.constraints(x_t), dtype=float)
    if bar.ns:
        k = slice(bar.nf, None)
        lo, hi, has_lo, has_hi = bar.lo[k], bar.hi[k], bar.has_lo[k], bar.has_hi[k]
        gi = g[bar.ineq]
        s_res = np.clip(gi, np.where(has_lo, lo + 0.01 * dl[k], -np.inf),
                        np.where(has_hi, hi - 0.01 * du[k], np.inf))

        def term(sv):
            with np.errstate(divide="ignore", invalid="ignore"):
                b = -mu * (np.where(has_lo, np.log(np.where(has_lo, sv - lo, 1.0)), 0.0)
                           + np.where(has_hi, np.log(np.where(has_hi, hi - sv, 1.0)), 0.0))
            return np.where(np.isnan(b), np.inf, b) + nu * np.abs(gi - sv)

        w_t[k] = np.where(term(s_res) < term(w_t[k]), s_res, w_t[k])
    return w_t, x_t, bar.prob.objective(x_t), bar.cons(x_t, w_t, g)


def _refine(factors, K, rhs, rounds=3):
    """Solve ``K x = rhs`` with a few rounds of iterative refinement."""
    x = _solve(factors, rhs)
    scale = np.max(np.abs(rhs), initial=0.0) + 1e-300
    for _ in range(rounds):
        r = rhs - K @ x
        if np.max(np.abs(r), initial=0.0) <= 1e-14 * scale or not np.all(np.isfinite(r)):
            break
        x = x + _solve(factors, r)
    return x


def _max_step(dist, d, tau):
    """Largest alpha in (0, 1] keeping dist + alpha*d >= (1-tau)*dist."""
    neg = d < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * dist[neg] / d[neg])))


def _barrier_value(f, w, bar, mu):
    dl, du = bar.slacks(w)
    if np.any(dl[bar.has_lo] <= 0) or np.any(du[bar.has_hi] <= 0):
        return np.inf
    return f - mu * (np.sum(np.log(dl[bar.has_lo])) + np.sum(np.log(du[bar.has_hi])))


def _finish(bar, x, w, lam, zl, zu, status, kkt, iters, message):
    prob = bar.prob
    n = prob.n
    zl_x = np.zeros(n)
    zu_x = np.zeros(n)
    zl_x[bar.free] = zl[: bar.nf]
    zu_x[bar.free] = zu[: bar.nf]
    lam_lower = np.zeros(bar.m)
    lam_upper = np.zeros(bar.m)
    lam_lower[bar.ineq] = zl[bar.nf:]
    lam_upper[bar.ineq] = zu[bar.nf:]
    # for inequality rows, report lam consistent with the slack multipliers
    lam = lam.copy()
    lam[bar.ineq] = lam_upper[bar.ineq] - lam_lower[bar.ineq]
    if np.any(bar.fixed):
        r = np.asarray(prob.gradient(x)) + np.atleast_2d(prob.jacobian(x)).reshape(bar.m, n).T @ lam
        fx = np.flatnonzero(bar.fixed)
        zl_x[fx] = np.maximum(r[fx], 0.0)
        zu_x[fx] = np.maximum(-r[fx], 0.0)
    g = np.asarray(prob.constraints(x), dtype=float)
    viol = max(
        np.max(np.maximum(prob.gl - g, 0.0), initial=0.0),
        np.max(np.maximum(g - prob.gu, 0.0), initial=0.0),
        np.max(np.maximum(prob.xl - x, 0.0), initial=0.0),
        np.max(np.maximum(x - prob.xu, 0.0), initial=0.0),
    )
    return NlpSolution(
        x=x, lam=lam, zl=zl_x, zu=zu_x, lam_lower=lam_lower, lam_upper=lam_upper,
        status=status, objective=float(prob.objective(x)), constr_viol=float(viol),
        kkt_error=float(kkt), iterations=iters, message=message,
    )


def _restore(bar: _Barrier, cfg: NlpConfig, x, mu):
    """Minimize the l1 violation of the general constraints near ``x``.

    Returns ``(x_restored, violation)`` or None when the subproblem fails.
    """
    prob = bar.prob
    n, m = prob.n, prob.m
    xr = x.copy()
    dr = 1.0 / np.maximum(1.0, np.abs(xr))
    zeta = math.sqrt(mu)
    rho = 1.0

    # variables: x (n), p (m), q (m); rows: gl <= g(x) - p + q <= gu
    def objective(v):
        dx = (v[:n] - xr) * dr
        return rho * np.sum(v[n:]) + 0.5 * zeta * dx @ dx

    def gradient(v):
        out = np.full(n + 2 * m, rho)
        out[:n] = zeta * dr * dr * (v[:n] - xr)
        return out

    def constraints(v):
        return np.asarray(prob.constraints(v[:n])) - v[n:n + m] + v[n + m:]

    def jacobian(v):
        Jx = np.atleast_2d(prob.jacobian(v[:n])).reshape(m, n)
        return np.hstack([Jx, -np.eye(m), np.eye(m)])

    def hessian(v, lam, obj_factor):
        H = np.zeros((n + 2 * m, n + 2 * m))
        H[:n, :n] = prob.hessian(v[:n], lam, 0.0) + obj_factor * zeta * np.diag(dr * dr)
        return H

    g = np.asarray(prob.constraints(x), dtype=float)
    viol = g - np.clip(g, prob.gl, prob.gu)
    p0 = np.maximum(viol, 0.0) + 1e-2
    q0 = np.maximum(-viol, 0.0) + 1e-2
    sub = NlpProblem(
        n=n + 2 * m,
        xl=np.concatenate([prob.xl, np.zeros(2 * m)]),
        xu=np.concatenate([prob.xu, np.full(2 * m, np.inf)]),
        gl=prob.gl, gu=prob.gu,
        objective=objective, gradient=gradient, constraints=constraints,
        jacobian=jacobian, hessian=hessian, convex=prob.convex,
    )
    sub_cfg = NlpConfig(**{**cfg.__dict__, "restoration": False, "mu_min": max(cfg.mu_min, 1e-9)})
    sub_bar = _Barrier(sub)
    v0 = np.concatenate([x, p0, q0])
    v0[sub_bar.fixed] = sub_bar.x_fixed[sub_bar.fixed]
    sol = _ipm(sub_bar, sub_cfg, v0, depth=1, mu0=max(mu, 1e-2))
    if sol.status not in (OPTIMAL, ITERATION_LIMIT):
        return None
    xr_new = sol.x[:n]
    g = np.asarray(prob.constraints(xr_new), dtype=float)
    violation = float(np.sum(np.maximum(prob.gl - g, 0.0) + np.maximum(g - prob.gu, 0.0)))
    logger.debug("restoration: violation %.3e after %d iterations", violation, sol.iterations)
    return xr_new, violation
