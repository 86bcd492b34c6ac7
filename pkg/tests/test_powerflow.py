import numpy as np
import pytest

from conftest import branch_row, bus_row, gen_row, make_case
from opflearn.acopf import solve_acopf
from opflearn.errors import NoConvergence
from opflearn.netio import admittance, build_model
from opflearn.powerflow import (InjectionSpec, VoltageState, bus_roles, injections, jacobian, make_spec,
                                residual, setpoint_residual, solve_pf)


def _two_bus(r=0.0, x=0.1):
    raw = make_case([bus_row(1, 3), bus_row(2, 1, pd=50.0)], [gen_row(1, 200.0)], [branch_row(1, 2, r, x)])
    return build_model(raw)


def _random_state(model, rng):
    return VoltageState(rng.uniform(0.9, 1.1, model.n_bus), rng.uniform(-0.3, 0.3, model.n_bus))


def test_flat_start_no_shunts_zero_injection():
    m = _two_bus()
    s = injections(m, VoltageState.flat(2))
    np.testing.assert_allclose(s, 0, atol=1e-15)


def test_two_bus_analytic_injection():
    m = _two_bus()
    s = injections(m, VoltageState(np.ones(2), np.array([0.0, -0.1])))
    assert s[0].real == pytest.approx(10 * np.sin(0.1), abs=1e-12)


def test_residual_identity_and_linearity(case5):
    rng = np.random.default_rng(0)
    st = _random_state(case5, rng)
    spec = InjectionSpec(injections(case5, st), bus_roles(case5), np.ones(case5.n_bus))
    r, norm = residual(case5, st, spec)
    assert norm < 1e-12
    k = case5.load_bus[0]
    spec.s[k] -= 0.1          # one more unit of demand at a load bus
    r2, _ = residual(case5, st, spec)
    changed = np.flatnonzero(np.abs(r2 - r) > 1e-12)
    assert len(changed) == 1
    assert r2[changed[0]] - r[changed[0]] == pytest.approx(0.1, abs=1e-12)


def test_residual_equals_injections_minus_spec(case14):
    rng = np.random.default_rng(1)
    st = _random_state(case14, rng)
    spec = make_spec(case14, case14.load_vector(), np.ones(case14.n_gen), np.full(case14.n_gen, 0.3))
    mis = injections(case14, st) - spec.s
    r, _ = residual(case14, st, spec)
    np.testing.assert_allclose(r, np.concatenate([mis.real[spec.p_rows], mis.imag[spec.q_rows]]), atol=1e-13)


@pytest.mark.parametrize("name", ["case5", "case14"])
def test_jacobian_matches_finite_differences(name, request):
    m = request.getfixturevalue(name)
    rng = np.random.default_rng(2)
    spec = make_spec(m, m.load_vector(), np.ones(m.n_gen), np.full(m.n_gen, 0.2))
    pr, qr = spec.p_rows, spec.q_rows
    h = 1e-6
    for _ in range(20):
        st = _random_state(m, rng)
        J = jacobian(m, st, spec)
        fd = np.zeros_like(J)
        for j, (kind, idx) in enumerate([("a", i) for i in pr] + [("m", i) for i in qr]):
            plus = VoltageState(st.vm.copy(), st.va.copy())
            minus = VoltageState(st.vm.copy(), st.va.copy())
            arr_p, arr_m = (plus.va, minus.va) if kind == "a" else (plus.vm, minus.vm)
            arr_p[idx] += h
            arr_m[idx] -= h
            fd[:, j] = (residual(m, plus, spec)[0] - residual(m, minus, spec)[0]) / (2 * h)
        assert np.max(np.abs(J - fd)) < 1e-6


def test_jacobian_disconnected_pair_zero_cross_blocks():
    raw = make_case([bus_row(1, 3), bus_row(2, 1, pd=10.0), bus_row(3, 2), bus_row(4, 1, pd=10.0)],
                    [gen_row(1, 100.0), gen_row(3, 100.0)],
                    [branch_row(1, 2, 0.01, 0.1), branch_row(3, 4, 0.01, 0.1)])
    m = build_model(raw)
    spec = make_spec(m, m.load_vector(), np.ones(2), np.zeros(2))
    st = _random_state(m, np.random.default_rng(3))
    J = jacobian(m, st, spec)
    # residual rows and Jacobian columns both run over (p_rows, q_rows) buses
    buses = np.concatenate([spec.p_rows, spec.q_rows])
    island = np.isin(buses, [2, 3])
    assert np.any(J[np.ix_(~island, ~island)]) and np.any(J[np.ix_(island, island)])
    assert np.all(J[np.ix_(~island, island)] == 0)
    assert np.all(J[np.ix_(island, ~island)] == 0)


def test_flat_start_lossless_dp_dvm_zero():
    raw = make_case([bus_row(1, 3), bus_row(2, 1, pd=10.0), bus_row(3, 1, pd=10.0)], [gen_row(1, 100.0)],
                    [branch_row(1, 2, 0.0, 0.1), branch_row(2, 3, 0.0, 0.2), branch_row(1, 3, 0.0, 0.1)])
    m = build_model(raw)
    spec = make_spec(m, m.load_vector(), np.ones(1), np.zeros(1))
    J = jacobian(m, VoltageState.flat(3), spec)
    n_p = len(spec.p_rows)
    np.testing.assert_allclose(J[:n_p, n_p:], 0, atol=1e-12)


def test_solve_pf_zero_load_flat():
    m = _two_bus()
    st = solve_pf(m, np.zeros(2 * m.n_load), np.ones(1), np.zeros(1))
    np.testing.assert_allclose(st.vm, 1.0, atol=1e-12)
    np.testing.assert_allclose(st.va, 0.0, atol=1e-12)


def test_solve_pf_reproduces_opf_voltages(case5):
    sol = solve_acopf(case5, case5.load_vector())
    assert sol.ok
    st = solve_pf(case5, sol.load, sol.vg, sol.pg)
    np.testing.assert_allclose(st.vm, sol.state.vm, atol=1e-5)
    np.testing.assert_allclose(st.va, sol.state.va, atol=1e-5)
    _, res = setpoint_residual(case5, sol.load, sol.vg, sol.pg)
    assert res <= 1e-6


def test_solve_pf_residual_below_tolerance(case14):
    st = solve_pf(case14, case14.load_vector(), np.ones(case14.n_gen), case14.pmax * 0.3)
    spec = make_spec(case14, case14.load_vector(), np.ones(case14.n_gen), case14.pmax * 0.3)
    assert residual(case14, st, spec)[1] <= 1e-8


def test_solve_pf_overload_no_convergence(case5):
    with pytest.raises(NoConvergence):
        solve_pf(case5, 100 * case5.load_vector(), np.ones(case5.n_gen), np.zeros(case5.n_gen))


def test_lossless_total_injection_zero():
    raw = make_case([bus_row(1, 3), bus_row(2, 2), bus_row(3, 1, pd=80.0, qd=20.0)],
                    [gen_row(1, 200.0), gen_row(2, 200.0)],
                    [branch_row(1, 2, 0.0, 0.1), branch_row(2, 3, 0.0, 0.1), branch_row(1, 3, 0.0, 0.2)])
    m = build_model(raw)
    st = solve_pf(m, m.load_vector(), np.ones(2), np.array([0.0, 0.4]))
    assert abs(injections(m, st).real.sum()) < 1e-9


def test_setpoint_residual_flags_wrong_slack_output(case5):
    sol = solve_acopf(case5, case5.load_vector())
    pg = sol.pg.copy()
    pg[np.flatnonzero(case5.gen_bus == case5.slack)[0]] += 0.01
    _, res = setpoint_residual(case5, sol.load, sol.vg, pg)
    assert res == pytest.approx(0.01, rel=1e-3)


def test_admittance_consistent_with_injections(case5):
    st = _random_state(case5, np.random.default_rng(4))
    V = st.phasor
    np.testing.assert_allclose(injections(case5, st), V * np.conj(admittance(case5) @ V), atol=1e-14)
