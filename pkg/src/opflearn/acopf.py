"""Nonconvex AC optimal power flow in polar form.

Decision vector layout: ``[theta (N), |v| (N), p_g (G), q_g (G)]``.
Constraint rows: active balance (N), reactive balance (N), squared apparent
power at the from end of rated branches, same at the to end, then angle
difference rows for branches with a finite angle limit.

Load inputs are vectors ``(p_l..., q_l...)`` ordered by ``model.load_bus``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nlp
from .netio import NetworkModel, admittance
from .powerflow import (
    VoltageState,
    branch_flows,
    branch_two_ports,
    dS_dV,
    injections,
    load_injection,
    quad_form_matrix,
    rect_to_polar,
)

DUAL_FAMILIES = (
    "V_upper", "V_lower",
    "Pg_upper", "Pg_lower",
    "Qg_upper", "Qg_lower",
    "Flow_from", "Flow_to",
    "AngleDiff_upper", "AngleDiff_lower",
)

DEFAULT_ACTIVE_TOL = 1e-5

# a smaller final barrier than the solver default keeps weakly active bounds
# within 1e-6 of their limit, so dual- and slack-based active sets agree
OPF_CONFIG = nlp.NlpConfig(mu_min=1e-10)


def cost_scale(model: NetworkModel) -> float:
    """Objective divisor that brings cost gradients to order one."""
    return float(max(1.0, np.max(np.abs(model.cost_b) + 2 * np.abs(model.cost_a) * np.abs(model.pmax))))


def dual_labels(model: NetworkModel) -> list[str]:
    """Column names ``<family>_<element>`` in canonical order."""
    buses = [str(b) for b in model.bus_ids]
    gens = [str(g) for g in model.gen_ids]
    branches = [str(k + 1) for k in range(model.n_branch)]
    elems = {
        "V": buses, "Pg": gens, "Qg": gens, "Flow": branches, "AngleDiff": branches,
    }
    return [f"{fam}_{e}" for fam in DUAL_FAMILIES for e in elems[fam.split("_")[0]]]


class AcOpfProblem:
    """Callbacks for one (model, load) instance."""

    def __init__(self, model: NetworkModel, load):
        self.model = model
        self.load = np.asarray(load, dtype=float)
        N, G = model.n_bus, model.n_gen
        self.N, self.G = N, G
        self.Y = admittance(model)
        self.sd = load_injection(model, self.load)
        self.scale = cost_scale(model)
        self.rated = np.flatnonzero(model.rate > 0)
        self.angled = np.flatnonzero(np.isfinite(model.angmin) | np.isfinite(model.angmax))
        self.Yb = branch_two_ports(model)[self.rated]
        nr = len(self.rated)
        one, zero = np.ones(nr), np.zeros(nr)
        # per rated branch: quadratic forms of Pf, Qf, Pt, Qt in local u = (e_f, e_t, f_f, f_t)
        self.HPf = quad_form_matrix(self.Yb, np.stack([one, zero], -1), np.stack([zero, zero], -1))
        self.HQf = quad_form_matrix(self.Yb, np.stack([zero, zero], -1), np.stack([one, zero], -1))
        self.HPt = quad_form_matrix(self.Yb, np.stack([zero, one], -1), np.stack([zero, zero], -1))
        self.HQt = quad_form_matrix(self.Yb, np.stack([zero, zero], -1), np.stack([zero, one], -1))
        self.gen_inc = np.zeros((N, G))
        self.gen_inc[model.gen_bus, np.arange(G)] = 1.0
        self.n = 2 * N + 2 * G
        self.m = 2 * N + 2 * nr + len(self.angled)

    # index helpers
    def split(self, x):
        N, G = self.N, self.G
        return x[:N], x[N:2 * N], x[2 * N:2 * N + G], x[2 * N + G:]

    def _local(self, x):
        va, vm, _, _ = self.split(x)
        f, t = self.model.f_bus[self.rated], self.model.t_bus[self.rated]
        lvm = np.stack([vm[f], vm[t]], -1)
        lva = np.stack([va[f], va[t]], -1)
        e, fi = lvm * np.cos(lva), lvm * np.sin(lva)
        return lvm, lva, np.concatenate([e, fi], -1)

    def _flow_parts(self, x):
        lvm, lva, u = self._local(x)
        out = []
        for HP, HQ in ((self.HPf, self.HQf), (self.HPt, self.HQt)):
            gP = np.einsum("kij,kj->ki", HP, u)
            gQ = np.einsum("kij,kj->ki", HQ, u)
            P = 0.5 * np.einsum("ki,ki->k", u, gP)
            Q = 0.5 * np.einsum("ki,ki->k", u, gQ)
            out.append((P, Q, gP, gQ, HP, HQ))
        return lvm, lva, out

    # NlpProblem callbacks
    def objective(self, x):
        pg = self.split(x)[2]
        m = self.model
        return float(np.sum(m.cost_a * pg**2 + m.cost_b * pg + m.cost_c)) / self.scale

    def gradient(self, x):
        pg = self.split(x)[2]
        g = np.zeros(self.n)
        g[2 * self.N:2 * self.N + self.G] = (2 * self.model.cost_a * pg + self.model.cost_b) / self.scale
        return g

    def constraints(self, x):
        va, vm, pg, qg = self.split(x)
        S = injections(self.model, VoltageState(vm, va), self.Y)
        Sg = self.gen_inc @ (pg + 1j * qg)
        rows = [S.real - Sg.real, S.imag - Sg.imag]
        if len(self.rated):
            _, _, parts = self._flow_parts(x)
            for P, Q, *_ in parts:
                rows.append(P**2 + Q**2)
        rows.append(va[self.model.f_bus[self.angled]] - va[self.model.t_bus[self.angled]])
        return np.concatenate(rows)

    def bounds(self):
        m = self.model
        N, G = self.N, self.G
        xl = np.concatenate([np.full(N, -np.inf), m.vmin, m.pmin, m.qmin])
        xu = np.concatenate([np.full(N, np.inf), m.vmax, m.pmax, m.qmax])
        xl[m.slack] = xu[m.slack] = 0.0
        nr = len(self.rated)
        gl = np.concatenate([-self.sd.real, -self.sd.imag, np.full(2 * nr, -np.inf), m.angmin[self.angled]])
        gu = np.concatenate([-self.sd.real, -self.sd.imag, np.tile(m.rate[self.rated] ** 2, 2), m.angmax[self.angled]])
        return xl, xu, gl, gu

    def jacobian(self, x):
        va, vm, _, _ = self.split(x)
        N, G = self.N, self.G
        J = np.zeros((self.m, self.n))
        dVa, dVm = dS_dV(self.Y, vm * np.exp(1j * va))
        J[:N, :N] = dVa.real
        J[:N, N:2 * N] = dVm.real
        J[N:2 * N, :N] = dVa.imag
        J[N:2 * N, N:2 * N] = dVm.imag
        J[:N, 2 * N:2 * N + G] = -self.gen_inc
        J[N:2 * N, 2 * N + G:] = -self.gen_inc
        row = 2 * N
        nr = len(self.rated)
        if nr:
            lvm, lva, parts = self._flow_parts(x)
            f, t = self.model.f_bus[self.rated], self.model.t_bus[self.rated]
            cols_th = np.stack([f, t], -1)
            for P, Q, gP, gQ, _, _ in parts:
                gh = 2 * P[:, None] * gP + 2 * Q[:, None] * gQ
                gpol, _ = rect_to_polar(lvm, lva, gh, np.zeros((nr, 4, 4)))
                r = row + np.arange(nr)
                for j in range(2):
                    np.add.at(J, (r, cols_th[:, j]), gpol[:, j])
                    np.add.at(J, (r, N + cols_th[:, j]), gpol[:, 2 + j])
                row += nr
        na = len(self.angled)
        r = row + np.arange(na)
        J[r, self.model.f_bus[self.angled]] += 1.0
        J[r, self.model.t_bus[self.angled]] -= 1.0
        return J

    def hessian(self, x, lam, obj_factor):
        va, vm, _, _ = self.split(x)
        N, G = self.N, self.G
        H = np.zeros((self.n, self.n))
        pg_idx = 2 * N + np.arange(G)
        H[pg_idx, pg_idx] = obj_factor * 2 * self.model.cost_a / self.scale
        e, f = vm * np.cos(va), vm * np.sin(va)
        u = np.concatenate([e, f])
        Hu = quad_form_matrix(self.Y, lam[:N], lam[N:2 * N])
        _, Hp = rect_to_polar(vm, va, Hu @ u, Hu)
        H[:2 * N, :2 * N] += Hp
        nr = len(self.rated)
        if nr:
            lvm, lva, parts = self._flow_parts(x)
            fb, tb = self.model.f_bus[self.rated], self.model.t_bus[self.rated]
            idx = np.stack([fb, tb, N + fb, N + tb], -1)
            for s, (P, Q, gP, gQ, HP, HQ) in enumerate(parts):
                mu = lam[2 * N + s * nr: 2 * N + (s + 1) * nr]
                gh = 2 * P[:, None] * gP + 2 * Q[:, None] * gQ
                hh = 2 * (np.einsum("ki,kj->kij", gP, gP) + np.einsum("ki,kj->kij", gQ, gQ)
                          + P[:, None, None] * HP + Q[:, None, None] * HQ)
                _, hpol = rect_to_polar(lvm, lva, mu[:, None] * gh, mu[:, None, None] * hh)
                np.add.at(H, (idx[:, :, None], idx[:, None, :]), hpol)
        return H

    def initial_point(self):
        m = self.model
        vm = np.clip(np.ones(self.N), m.vmin, m.vmax)
        return np.concatenate([np.zeros(self.N), vm, 0.5 * (m.pmin + m.pmax), 0.5 * (m.qmin + m.qmax)])

    def nlp_problem(self) -> nlp.NlpProblem:
        xl, xu, gl, gu = self.bounds()
        return nlp.NlpProblem(
            n=self.n, xl=xl, xu=xu, gl=gl, gu=gu,
            objective=self.objective, gradient=self.gradient,
            constraints=self.constraints, jacobian=self.jacobian, hessian=self.hessian,
            convex=False,
        )


def build_acopf(model: NetworkModel, load) -> nlp.NlpProblem:
    return AcOpfProblem(model, load).nlp_problem()


@dataclass
class AcOpfSolution:
    status: str
    load: np.ndarray
    state: VoltageState | None = None
    vg: np.ndarray | None = None
    pg: np.ndarray | None = None
    qg: np.ndarray | None = None
    objective: float = float("nan")
    duals: np.ndarray | None = None     # canonical DUAL_FAMILIES order
    balance_residual: float = float("nan")
    iterations: int = 0
    message: str = ""
    nlp_solution: nlp.NlpSolution | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == nlp.OPTIMAL

    def outputs(self) -> np.ndarray:
        """The learning target ``y = (v_g..., p_g...)`` per generator."""
        return np.concatenate([self.vg, self.pg])


def _dual_vector(prob: AcOpfProblem, sol: nlp.NlpSolution) -> np.ndarray:
    m = prob.model
    N, G, nb = prob.N, prob.G, m.n_branch
    v = slice(N, 2 * N)
    pgs = slice(2 * N, 2 * N + G)
    qgs = slice(2 * N + G, 2 * N + 2 * G)
    nr = len(prob.rated)
    flow_f = np.zeros(nb)
    flow_t = np.zeros(nb)
    flow_f[prob.rated] = sol.lam_upper[2 * N:2 * N + nr]
    flow_t[prob.rated] = sol.lam_upper[2 * N + nr:2 * N + 2 * nr]
    ang_u = np.zeros(nb)
    ang_l = np.zeros(nb)
    a0 = 2 * N + 2 * nr
    ang_u[prob.angled] = sol.lam_upper[a0:]
    ang_l[prob.angled] = sol.lam_lower[a0:]
    return np.concatenate([
        sol.zu[v], sol.zl[v], sol.zu[pgs], sol.zl[pgs], sol.zu[qgs], sol.zl[qgs],
        flow_f, flow_t, ang_u, ang_l,
    ])


def solve_acopf(model: NetworkModel, load, config: nlp.NlpConfig | None = None, x0=None) -> AcOpfSolution:
    """Solve the AC OPF locally; check the result before reporting success."""
    prob = AcOpfProblem(model, load)
    sol = nlp.solve(prob.nlp_problem(), config or OPF_CONFIG, prob.initial_point() if x0 is None else x0)
    va, vm, pg, qg = prob.split(sol.x)
    state = VoltageState(vm.copy(), va.copy())
    S = injections(model, state, prob.Y) - prob.gen_inc @ (pg + 1j * qg) + prob.sd
    bal = float(np.max(np.abs(np.concatenate([S.real, S.imag]))))
    status, message = sol.status, sol.message
    if status == nlp.OPTIMAL and (bal > 1e-6 or sol.constr_viol > 1e-6):
        status, message = nlp.NUMERICAL_FAILURE, f"post-check failed (balance {bal:.2e}, violation {sol.constr_viol:.2e})"
    return AcOpfSolution(
        status=status,
        load=np.asarray(load, dtype=float).copy(),
        state=state,
        vg=vm[model.gen_bus].copy(),
        pg=pg.copy(),
        qg=qg.copy(),
        objective=float(sol.objective * prob.scale),
        duals=_dual_vector(prob, sol),
        balance_residual=bal,
        iterations=sol.iterations,
        message=message,
        nlp_solution=sol,
    )


def active_set(solution: AcOpfSolution, active_tol: float = DEFAULT_ACTIVE_TOL) -> np.ndarray:
    """Boolean mask over the canonical dual vector: ``|multiplier| > active_tol``."""
    return active_set_from_duals(solution.duals, active_tol)


def active_set_from_duals(duals, active_tol: float = DEFAULT_ACTIVE_TOL) -> np.ndarray:
    return np.abs(np.asarray(duals, dtype=float)) > active_tol


def constraint_slacks(model: NetworkModel, solution: AcOpfSolution) -> np.ndarray:
    """Primal slack of every inequality in canonical order (inf if unconstrained)."""
    st = solution.state
    vg_slack_u = model.vmax - st.vm
    vg_slack_l = st.vm - model.vmin
    sf, stt = branch_flows(model, st)
    rate2 = np.where(model.rate > 0, model.rate**2, np.inf)
    dth = st.va[model.f_bus] - st.va[model.t_bus]
    return np.concatenate([
        vg_slack_u, vg_slack_l,
        model.pmax - solution.pg, solution.pg - model.pmin,
        model.qmax - solution.qg, solution.qg - model.qmin,
        rate2 - np.abs(sf) ** 2, rate2 - np.abs(stt) ** 2,
        model.angmax - dth, dth - model.angmin,
    ])
