"""Polar AC power flow: injections, mismatch, Jacobian, Newton solve.

Also hosts the second-derivative helpers shared with the OPF model.  Those
work in rectangular coordinates, where every bus or branch power is a
quadratic form of ``u = (e, f)`` with ``V = e + jf``, and then map to polar
``(theta, |v|)`` by the chain rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence
from .netio import NetworkModel, admittance

SLACK, PV, PQ = 0, 1, 2


@dataclass
class VoltageState:
    vm: np.ndarray
    va: np.ndarray

    @property
    def phasor(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    @classmethod
    def flat(cls, n: int) -> "VoltageState":
        return cls(np.ones(n), np.zeros(n))


@dataclass
class InjectionSpec:
    """Net complex power targets per bus plus the Newton role of each bus."""

    s: np.ndarray
    roles: np.ndarray
    vset: np.ndarray

    @property
    def p_rows(self) -> np.ndarray:
        return np.flatnonzero(self.roles != SLACK)

    @property
    def q_rows(self) -> np.ndarray:
        return np.flatnonzero(self.roles == PQ)


def bus_roles(model: NetworkModel) -> np.ndarray:
    roles = np.full(model.n_bus, PQ, dtype=int)
    roles[model.gen_bus] = PV
    roles[model.slack] = SLACK
    return roles


def load_injection(model: NetworkModel, load) -> np.ndarray:
    """Complex bus demand for a load vector ``(p_l..., q_l...)``."""
    load = np.asarray(load, dtype=float)
    nl = model.n_load
    if load.shape != (2 * nl,):
        raise ValueError(f"load vector must have length {2 * nl}, got {load.shape}")
    sd = np.zeros(model.n_bus, dtype=complex)
    sd[model.load_bus] = load[:nl] + 1j * load[nl:]
    return sd


def injections(model: NetworkModel, state: VoltageState, Y=None) -> np.ndarray:
    if Y is None:
        Y = admittance(model)
    V = state.phasor
    return V * np.conj(Y @ V)


def dS_dV(Y: np.ndarray, V: np.ndarray):
    """Derivatives of bus injections with respect to angle and magnitude."""
    Ibus = Y @ V
    Vnorm = V / np.abs(V)
    dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Y * V[None, :])
    dVm = np.diag(V) @ np.conj(Y * Vnorm[None, :]) + np.diag(np.conj(Ibus) * Vnorm)
    return dVa, dVm


def residual(model: NetworkModel, state: VoltageState, spec: InjectionSpec, Y=None):
    """Mismatch ``injections - spec``: P at non-slack buses, then Q at PQ buses.

    Returns ``(values, max_norm)``.
    """
    mis = injections(model, state, Y) - spec.s
    r = np.concatenate([mis.real[spec.p_rows], mis.imag[spec.q_rows]])
    return r, float(np.max(np.abs(r), initial=0.0))


def jacobian(model: NetworkModel, state: VoltageState, spec: InjectionSpec, Y=None) -> np.ndarray:
    """Analytic Jacobian of :func:`residual`.

    Columns are angles at non-slack buses followed by magnitudes at PQ buses,
    so the matrix is square for the Newton step.
    """
    if Y is None:
        Y = admittance(model)
    dVa, dVm = dS_dV(Y, state.phasor)
    pr, qr = spec.p_rows, spec.q_rows
    return np.block([
        [dVa.real[np.ix_(pr, pr)], dVm.real[np.ix_(pr, qr)]],
        [dVa.imag[np.ix_(qr, pr)], dVm.imag[np.ix_(qr, qr)]],
    ])


def make_spec(model: NetworkModel, load, vg, pg) -> InjectionSpec:
    """Targets for a Newton power flow.

    ``vg`` and ``pg`` are per generator.  Slack-bus generator powers are
    ignored; the voltage of a bus with several generators is taken from the
    first of them.
    """
    vg = np.asarray(vg, dtype=float)
    pg = np.asarray(pg, dtype=float)
    roles = bus_roles(model)
    s = -load_injection(model, load)
    np.add.at(s, model.gen_bus, pg)
    vset = np.ones(model.n_bus)
    for k in range(model.n_gen - 1, -1, -1):
        vset[model.gen_bus[k]] = vg[k]
    return InjectionSpec(s=s, roles=roles, vset=vset)


def solve_pf(model: NetworkModel, load, vg, pg, start: VoltageState | None = None,
             tol: float = 1e-8, max_iter: int = 50) -> VoltageState:
    """Newton-Raphson power flow from a flat (or given) start.

    Raises NoConvergence when the mismatch does not drop below ``tol`` within
    ``max_iter`` iterations or the iterate becomes non-finite.
    """
    Y = admittance(model)
    spec = make_spec(model, load, vg, pg)
    if start is None:
        state = VoltageState.flat(model.n_bus)
    else:
        state = VoltageState(start.vm.copy(), start.va.copy())
    fixed_v = spec.roles != PQ
    state.vm[fixed_v] = spec.vset[fixed_v]
    if start is None:
        state.va[:] = 0.0
    pr, qr = spec.p_rows, spec.q_rows
    np_ = len(pr)

    for it in range(max_iter + 1):
        F, norm = residual(model, state, spec, Y)
        if not np.isfinite(norm):
            break
        if norm <= tol:
            return state
        if it == max_iter:
            break
        J = jacobian(model, state, spec, Y)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        state.va[pr] += dx[:np_]
        state.vm[qr] += dx[np_:]
        if not np.all(np.isfinite(state.vm)) or np.any(state.vm[qr] <= 0):
            break
    raise NoConvergence(f"power flow did not converge (mismatch {norm:.3e} after {it} iterations)")


def setpoint_residual(model: NetworkModel, load, vg, pg, start: VoltageState | None = None):
    """Recover voltages from ``(load, vg, pg)`` and check every stored set-point.

    The Newton solve leaves the slack generation free; the residual is the
    max-norm active mismatch at every bus with all stored ``pg`` applied,
    together with the voltage-magnitude error at generator buses.  Returns
    ``(state, residual)``.
    """
    state = solve_pf(model, load, vg, pg, start)
    spec = make_spec(model, load, vg, pg)
    mis = injections(model, state) - spec.s
    p_err = float(np.max(np.abs(mis.real)))
    v_err = float(np.max(np.abs(state.vm[model.gen_bus] - np.asarray(vg, dtype=float)), initial=0.0))
    return state, max(p_err, v_err)


# -- rectangular-coordinate quadratic forms ---------------------------------

def quad_form_matrix(Y: np.ndarray, lam_p: np.ndarray, lam_q: np.ndarray) -> np.ndarray:
    """Symmetric ``H`` such that ``sum(lam_p*P + lam_q*Q) = u @ H @ u / 2``.

    ``P + jQ = V * conj(Y V)`` and ``u = (e, f)``.  Works on stacked inputs
    (leading batch dimensions).
    """
    G, B = Y.real, Y.imag
    Dp = lam_p[..., :, None]
    Dq = lam_q[..., :, None]
    a = Dp * G - Dq * B
    b = -Dp * B - Dq * G
    K = np.concatenate([np.concatenate([a, b], -1), np.concatenate([-b, a], -1)], -2)
    return K + np.swapaxes(K, -1, -2)


def rect_to_polar(vm, va, grad_u, hess_u):
    """Map gradient/Hessian in ``(e, f)`` to ``(theta, |v|)``.

    Arrays may carry leading batch dimensions; the last axis of ``vm``/``va``
    has length n and ``grad_u``/``hess_u`` use the ``[e..., f...]`` layout.
    """
    n = vm.shape[-1]
    c, s = np.cos(va), np.sin(va)
    e, f = vm * c, vm * s
    # Ju maps (dtheta, dv) -> (de, df)
    zero = np.zeros_like(vm)
    Ju = np.concatenate([
        np.concatenate([_diag(-f), _diag(c)], -1),
        np.concatenate([_diag(e), _diag(s)], -1),
    ], -2)
    ge, gf = grad_u[..., :n], grad_u[..., n:]
    grad = np.einsum("...ij,...i->...j", Ju, grad_u)
    hess = np.einsum("...ki,...kl,...lj->...ij", Ju, hess_u, Ju)
    tt = -ge * e - gf * f
    tv = -ge * s + gf * c
    corr = np.concatenate([
        np.concatenate([_diag(tt), _diag(tv)], -1),
        np.concatenate([_diag(tv), _diag(zero)], -1),
    ], -2)
    return grad, hess + corr


def _diag(v):
    out = np.zeros(v.shape + (v.shape[-1],), dtype=v.dtype)
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def branch_two_ports(model: NetworkModel) -> np.ndarray:
    """Per-branch 2x2 admittance blocks, shape (n_branch, 2, 2)."""
    yff, yft, ytf, ytt = model.branch_admittances()
    return np.stack([np.stack([yff, yft], -1), np.stack([ytf, ytt], -1)], -2)


def branch_flows(model: NetworkModel, state: VoltageState):
    """Complex power entering each branch at its from and to ends."""
    yff, yft, ytf, ytt = model.branch_admittances()
    V = state.phasor
    vf, vt = V[model.f_bus], V[model.t_bus]
    sf = vf * np.conj(yff * vf + yft * vt)
    st = vt * np.conj(ytf * vf + ytt * vt)
    return sf, st
