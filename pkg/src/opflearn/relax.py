"""Second-order cone (Jabr) relaxation of the AC feasible set.

Lifted variables per bus ``w_i = |v_i|^2`` and per branch ``c = v_f v_t
cos(th_f - th_t)``, ``s = -v_f v_t sin(th_f - th_t)``, so that
``V_f conj(V_t) = c - js``.  Branch flows and bus balances are linear in
``(w, c, s)``; the nonconvex identity ``c^2 + s^2 = w_f w_t`` is relaxed to
``c^2 + s^2 <= w_f w_t``.  Any AC-feasible point, lifted, satisfies every row,
so infeasibility of the relaxation proves AC infeasibility.

Three services sit on top of the formulation: a cost lower bound at a fixed
load, the maximum servable active load per bus with every load free, and the
Euclidean projection of a load vector onto the relaxed-feasible load set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nlp
from .acopf import cost_scale
from .errors import NumericalFailure, RelaxInfeasible, Unbounded
from .netio import NetworkModel

DEFAULT_PROJ_TOL = 1e-5
RELAXATION = "soc"

# convex problems: tighter barrier floor, the projections feed hyperplanes
RELAX_CONFIG = nlp.NlpConfig(tol=1e-8, mu_min=1e-13, max_iter=500)

FIXED, FREE = "fixed", "free"


class RelaxedFormulation:
    """Rows of the relaxation over ``z = [w, c, s, p_g, q_g, p_l, q_l]``.

    Row order: active balance (N), reactive balance (N), cone (branches),
    squared flow at the from and to ends of rated branches, angle rows
    (upper then lower) for branches with a usable angle limit, and, when
    loads are free, the power-factor rows ``q_l - p_l <= 0``.
    """

    def __init__(self, model: NetworkModel, load_mode: str = FIXED):
        self.model = model
        self.load_mode = load_mode
        N, nb, G, L = model.n_bus, model.n_branch, model.n_gen, model.n_load
        self.N, self.nb, self.G, self.L = N, nb, G, L
        o = np.cumsum([0, N, nb, nb, G, G, L, L])
        self.sw, self.sc, self.ss, self.spg, self.sqg, self.spl, self.sql = (
            slice(o[k], o[k + 1]) for k in range(7))
        self.n = int(o[-1])
        f, t = model.f_bus, model.t_bus
        br = np.arange(nb)
        yff, yft, ytf, ytt = model.branch_admittances()

        # branch flows as linear maps of z
        def flow(y_self, y_mut, end, sign):
            P = np.zeros((nb, self.n))
            Q = np.zeros((nb, self.n))
            P[br, self.sw.start + end] = y_self.real
            Q[br, self.sw.start + end] = -y_self.imag
            G_, B_ = y_mut.real, y_mut.imag
            # conj(y)(c + sign*j s)
            P[br, self.sc.start + br] = G_
            P[br, self.ss.start + br] = sign * B_
            Q[br, self.sc.start + br] = -B_
            Q[br, self.ss.start + br] = sign * G_
            return P, Q

        self.Pf, self.Qf = flow(yff, yft, f, -1.0)
        self.Pt, self.Qt = flow(ytt, ytf, t, 1.0)

        # bus balance: flows out + shunt + load - generation = 0
        Ap = np.zeros((N, self.n))
        Aq = np.zeros((N, self.n))
        np.add.at(Ap, f, self.Pf)
        np.add.at(Ap, t, self.Pt)
        np.add.at(Aq, f, self.Qf)
        np.add.at(Aq, t, self.Qt)
        Ap[np.arange(N), self.sw.start + np.arange(N)] += model.gs
        Aq[np.arange(N), self.sw.start + np.arange(N)] -= model.bs
        Ap[model.gen_bus, self.spg.start + np.arange(G)] -= 1.0
        Aq[model.gen_bus, self.sqg.start + np.arange(G)] -= 1.0
        Ap[model.load_bus, self.spl.start + np.arange(L)] += 1.0
        Aq[model.load_bus, self.sql.start + np.arange(L)] += 1.0
        self.A_bal = np.vstack([Ap, Aq])

        self.rated = np.flatnonzero(model.rate > 0)
        # angle limits as linear rows; sides beyond +-90 deg are dropped
        half = np.pi / 2
        up = np.flatnonzero(np.isfinite(model.angmax) & (np.abs(model.angmax) < half))
        lo = np.flatnonzero(np.isfinite(model.angmin) & (np.abs(model.angmin) < half))
        A_ang = []
        for k in up:   # -s - tan(angmax) c <= 0
            r = np.zeros(self.n)
            r[self.ss.start + k] = -1.0
            r[self.sc.start + k] = -np.tan(model.angmax[k])
            A_ang.append(r)
        for k in lo:   # tan(angmin) c + s <= 0
            r = np.zeros(self.n)
            r[self.ss.start + k] = 1.0
            r[self.sc.start + k] = np.tan(model.angmin[k])
            A_ang.append(r)
        self.ang_upper, self.ang_lower = up, lo
        self.A_ang = np.array(A_ang).reshape(-1, self.n)
        if load_mode == FREE:
            A_pf = np.zeros((L, self.n))
            A_pf[np.arange(L), self.sql.start + np.arange(L)] = 1.0
            A_pf[np.arange(L), self.spl.start + np.arange(L)] = -1.0
        else:
            A_pf = np.zeros((0, self.n))
        self.A_lin = np.vstack([self.A_ang, A_pf])

        nr = len(self.rated)
        self.flow_P = np.concatenate([self.Pf[self.rated], self.Pt[self.rated]])
        self.flow_Q = np.concatenate([self.Qf[self.rated], self.Qt[self.rated]])
        self.m = 2 * N + nb + 2 * nr + len(self.A_lin)

    # -- rows -----------------------------------------------------------------
    def constraints(self, z):
        w, c, s = z[self.sw], z[self.sc], z[self.ss]
        f, t = self.model.f_bus, self.model.t_bus
        # c^2 + s^2 <= w_f w_t written as a convex function (w_t > 0)
        cone = (c * c + s * s) / w[t] - w[f]
        P, Q = self.flow_P @ z, self.flow_Q @ z
        return np.concatenate([self.A_bal @ z, cone, P * P + Q * Q, self.A_lin @ z])

    def jacobian(self, z):
        w, c, s = z[self.sw], z[self.sc], z[self.ss]
        f, t = self.model.f_bus, self.model.t_bus
        nb = self.nb
        Jc = np.zeros((nb, self.n))
        br = np.arange(nb)
        wt = w[t]
        Jc[br, self.sc.start + br] = 2 * c / wt
        Jc[br, self.ss.start + br] = 2 * s / wt
        np.add.at(Jc, (br, self.sw.start + f), -1.0)
        np.add.at(Jc, (br, self.sw.start + t), -(c * c + s * s) / wt ** 2)
        P, Q = self.flow_P @ z, self.flow_Q @ z
        Jf = 2 * P[:, None] * self.flow_P + 2 * Q[:, None] * self.flow_Q
        return np.vstack([self.A_bal, Jc, Jf, self.A_lin])

    def constraint_hessian(self, z, lam):
        """Second derivatives of ``lam @ rows``."""
        H = np.zeros((self.n, self.n))
        nb, N = self.nb, self.N
        lc = lam[2 * N:2 * N + nb]
        br = np.arange(nb)
        c, s, wt = z[self.sc], z[self.ss], z[self.sw][self.model.t_bus]
        ic, is_ = self.sc.start + br, self.ss.start + br
        it = self.sw.start + self.model.t_bus
        H[ic, ic] += 2 * lc / wt
        H[is_, is_] += 2 * lc / wt
        np.add.at(H, (it, it), 2 * lc * (c * c + s * s) / wt ** 3)
        for i, g in ((ic, -2 * lc * c / wt ** 2), (is_, -2 * lc * s / wt ** 2)):
            np.add.at(H, (i, it), g)
            np.add.at(H, (it, i), g)
        nf = len(self.flow_P)
        lf = lam[2 * N + nb:2 * N + nb + nf]
        H += 2 * (self.flow_P.T * lf) @ self.flow_P + 2 * (self.flow_Q.T * lf) @ self.flow_Q
        return H

    def row_bounds(self):
        N, nb, nf = self.N, self.nb, len(self.flow_P)
        rate2 = np.tile(self.model.rate[self.rated] ** 2, 2)
        gl = np.concatenate([np.zeros(2 * N), np.full(nb + nf + len(self.A_lin), -np.inf)])
        gu = np.concatenate([np.zeros(2 * N), np.zeros(nb), rate2, np.zeros(len(self.A_lin))])
        return gl, gu

    def var_bounds(self, load=None):
        m = self.model
        inf = np.full(self.nb, np.inf)
        L = self.L
        if self.load_mode == FIXED:
            load = np.asarray(load, dtype=float)
            ll = lu = load
        else:
            ll, lu = np.zeros(2 * L), np.full(2 * L, np.inf)
        xl = np.concatenate([m.vmin ** 2, -inf, -inf, m.pmin, m.qmin, ll])
        xu = np.concatenate([m.vmax ** 2, inf, inf, m.pmax, m.qmax, lu])
        return xl, xu

    def initial_point(self, load=None):
        m = self.model
        w = np.clip(np.ones(self.N), m.vmin ** 2, m.vmax ** 2)
        if load is None:
            load = np.zeros(2 * self.L)
        return np.concatenate([w, np.ones(self.nb), np.zeros(self.nb),
                               0.5 * (m.pmin + m.pmax), 0.5 * (m.qmin + m.qmax), load])

    def problem(self, objective, gradient, obj_hessian, load=None) -> nlp.NlpProblem:
        xl, xu = self.var_bounds(load)
        gl, gu = self.row_bounds()

        def hessian(z, lam, obj_factor):
            return obj_factor * obj_hessian + self.constraint_hessian(z, lam)

        return nlp.NlpProblem(
            n=self.n, xl=xl, xu=xu, gl=gl, gu=gu,
            objective=objective, gradient=gradient,
            constraints=self.constraints, jacobian=self.jacobian, hessian=hessian,
            convex=True,
        )

    # -- lifting --------------------------------------------------------------
    def lift(self, state, pg, qg, load) -> np.ndarray:
        """Lifted point of an AC operating point."""
        f, t = self.model.f_bus, self.model.t_bus
        vm, va = state.vm, state.va
        d = va[f] - va[t]
        prod = vm[f] * vm[t]
        return np.concatenate([vm ** 2, prod * np.cos(d), -prod * np.sin(d),
                               pg, qg, np.asarray(load, dtype=float)])

    def violation(self, z) -> float:
        """Largest row or bound violation at ``z``."""
        g = self.constraints(z)
        gl, gu = self.row_bounds()
        xl, xu = self.var_bounds(z[self.spl.start:] if self.load_mode == FIXED else None)
        return float(max(np.max(np.maximum(gl - g, 0.0), initial=0.0),
                         np.max(np.maximum(g - gu, 0.0), initial=0.0),
                         np.max(np.maximum(xl - z, 0.0), initial=0.0),
                         np.max(np.maximum(z - xu, 0.0), initial=0.0)))


@dataclass
class RelaxedSolution:
    objective: float
    z: np.ndarray
    status: str
    relaxation: str = RELAXATION


@dataclass
class ProjectionResult:
    x_star: np.ndarray
    distance: float
    status: str
    raw_distance: float = 0.0
    relaxation: str = RELAXATION

    @property
    def feasible(self) -> bool:
        return self.distance == 0.0


def _load_slice(form):
    return slice(form.spl.start, form.sql.stop)


def solve_relaxed(model: NetworkModel, load, config: nlp.NlpConfig | None = None,
                  proj_tol: float = DEFAULT_PROJ_TOL) -> RelaxedSolution:
    """Minimum generation cost over the relaxation at a fixed load.

    The result lower-bounds every AC OPF objective at the same load.  When
    the solve fails, infeasibility is confirmed by projecting the load; a
    positive distance raises RelaxInfeasible carrying that projection.
    """
    load = np.asarray(load, dtype=float)
    form = RelaxedFormulation(model, FIXED)
    scale = cost_scale(model)
    a, b, cc = model.cost_a, model.cost_b, model.cost_c
    sp = form.spg
    H = np.zeros((form.n, form.n))
    H[np.arange(sp.start, sp.stop), np.arange(sp.start, sp.stop)] = 2 * a / scale

    def objective(z):
        pg = z[sp]
        return float(np.sum(a * pg ** 2 + b * pg + cc)) / scale

    def gradient(z):
        g = np.zeros(form.n)
        g[sp] = (2 * a * z[sp] + b) / scale
        return g

    prob = form.problem(objective, gradient, H, load)
    sol = nlp.solve(prob, config or RELAX_CONFIG, form.initial_point(load))
    if sol.ok:
        return RelaxedSolution(objective=float(sol.objective * scale), z=sol.x, status=sol.status)
    proj = nearest_feasible(model, load, config=config, proj_tol=proj_tol)
    if not proj.feasible:
        raise RelaxInfeasible(
            f"load is outside the relaxed feasible set (distance {proj.distance:.3e})", projection=proj)
    raise NumericalFailure(f"relaxed solve failed: {sol.status} {sol.message}")


def max_load(model: NetworkModel, bus, config: nlp.NlpConfig | None = None) -> float:
    """Largest active demand at load bus ``bus`` (bus id) over the relaxation.

    All loads are decision variables with ``0 <= q_l <= p_l``.
    """
    where = np.flatnonzero(model.bus_ids[model.load_bus] == bus)
    if len(where) == 0:
        raise ValueError(f"bus {bus} carries no load")
    return _max_load_index(model, int(where[0]), config)


def _max_load_index(model, k, config=None):
    form = RelaxedFormulation(model, FREE)
    j = form.spl.start + k
    H = np.zeros((form.n, form.n))

    def objective(z):
        return -float(z[j])

    def gradient(z):
        g = np.zeros(form.n)
        g[j] = -1.0
        return g

    prob = form.problem(objective, gradient, H)
    sol = nlp.solve(prob, config or RELAX_CONFIG, form.initial_point())
    if not sol.ok:
        if sol.x[j] > 1e8:
            raise Unbounded(f"maximum load at load index {k} is unbounded")
        raise NumericalFailure(f"max-load solve failed: {sol.status} {sol.message}")
    return float(sol.x[j])


def max_loads(model: NetworkModel, config: nlp.NlpConfig | None = None) -> np.ndarray:
    """``p_bar`` for every load bus, in load order."""
    return np.array([_max_load_index(model, k, config) for k in range(model.n_load)])


def nearest_feasible(model: NetworkModel, x_hat, config: nlp.NlpConfig | None = None,
                     proj_tol: float = DEFAULT_PROJ_TOL) -> ProjectionResult:
    """Euclidean projection of ``x_hat`` onto the relaxed-feasible load set."""
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape != (2 * model.n_load,) or not np.all(np.isfinite(x_hat)):
        raise ValueError("x_hat must be a finite load vector of length 2*n_load")
    form = RelaxedFormulation(model, FREE)
    ls = _load_slice(form)
    start = np.maximum(x_hat, 0.0)
    L = model.n_load
    start[L:] = np.minimum(start[L:], start[:L])
    z0 = form.initial_point(start)
    H = np.zeros((form.n, form.n))
    H[np.arange(ls.start, ls.stop), np.arange(ls.start, ls.stop)] = 1.0

    def objective(z):
        d = z[ls] - x_hat
        return 0.5 * float(d @ d)

    def gradient(z):
        g = np.zeros(form.n)
        g[ls] = z[ls] - x_hat
        return g

    prob = form.problem(objective, gradient, H)
    sol = nlp.solve(prob, config or RELAX_CONFIG, z0)
    if not sol.ok:
        raise NumericalFailure(f"projection failed: {sol.status} {sol.message}")
    x_star = sol.x[ls].copy()
    dist = float(np.linalg.norm(x_star - x_hat))
    if dist <= proj_tol:
        return ProjectionResult(x_star=x_hat.copy(), distance=0.0, status=sol.status, raw_distance=dist)
    return ProjectionResult(x_star=x_star, distance=dist, status=sol.status, raw_distance=dist)
