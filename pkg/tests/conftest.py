import warnings

import numpy as np
import pytest

from opflearn.netio import RawCase, build_model, bundled_case, load_model, read_case


@pytest.fixture(scope="session")
def case5():
    return load_model(bundled_case("case5"))


@pytest.fixture(scope="session")
def case14():
    return load_model(bundled_case("case14"))


def bus_row(i, typ, pd=0.0, qd=0.0, gs=0.0, bs=0.0, vmax=1.1, vmin=0.9):
    return (i, typ, pd, qd, gs, bs, 1, 1.0, 0.0, 230, 1, vmax, vmin)


def gen_row(bus, pmax, pmin=0.0, qmax=100.0, qmin=-100.0, status=1):
    return (bus, 0.0, 0.0, qmax, qmin, 1.0, 100, status, pmax, pmin)


def branch_row(f, t, r, x, b=0.0, rate=0.0, ratio=0.0, angle=0.0, angmin=-360.0, angmax=360.0):
    return (f, t, r, x, b, rate, rate, rate, ratio, angle, 1, angmin, angmax)


def cost_row(a=0.0, b=1.0, c=0.0):
    return (2, 0, 0, 3, a, b, c)


def make_case(bus, gen, branch, gencost=None, base=100.0, name="toy"):
    gencost = gencost or [cost_row() for _ in gen]
    return RawCase(base, tuple(map(tuple, bus)), tuple(map(tuple, gen)),
                   tuple(map(tuple, branch)), tuple(map(tuple, gencost)), name)


@pytest.fixture
def two_bus_line_limited():
    """Generator (1 p.u.) at bus 1 feeding a load at bus 2 over a lossless line rated 0.5 p.u."""
    raw = make_case(
        [bus_row(1, 3), bus_row(2, 1, pd=10.0, qd=0.0)],
        [gen_row(1, 100.0)],
        [branch_row(1, 2, 0.0, 0.01, rate=50.0)],
    )
    return build_model(raw)


def ppc_of(name):
    raw = read_case(bundled_case(name))
    return {"version": "2", "baseMVA": raw.base_mva, "bus": np.array(raw.bus, float),
            "gen": np.array(raw.gen, float), "branch": np.array(raw.branch, float),
            "gencost": np.array(raw.gencost, float)}


def pypower_opf(name, model, x):
    """Reference AC OPF at load vector ``x``: ``(success, objective, result)``."""
    pytest.importorskip("pypower")
    from pypower.api import ppoption, runopf

    ppc = ppc_of(name)
    L, base = model.n_load, ppc["baseMVA"]
    ppc["bus"][:, 2] = 0.0
    ppc["bus"][:, 3] = 0.0
    ppc["bus"][model.load_bus, 2] = x[:L] * base
    ppc["bus"][model.load_bus, 3] = x[L:] * base
    # pypower breaks on cases without any rated branch; a rating that can never bind is equivalent
    unrated = ppc["branch"][:, 5] == 0
    ppc["branch"][unrated, 5:8] = 1e4 * base
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = runopf(ppc, ppoption(VERBOSE=0, OUT_ALL=0))
    return bool(r["success"]), float(r["f"]), r


def cvx_project(model, x_hat):
    """Projection onto the relaxed load set with a conic solver: ``(x_star, distance)``."""
    cp = pytest.importorskip("cvxpy")
    from opflearn import relax

    F = relax.RelaxedFormulation(model, relax.FREE)
    z = cp.Variable(F.n)
    xl, xu = F.var_bounds()
    w, c, s = z[F.sw], z[F.sc], z[F.ss]
    f, t = model.f_bus, model.t_bus
    fl, fu = np.flatnonzero(np.isfinite(xl)), np.flatnonzero(np.isfinite(xu))
    cons = [F.A_bal @ z == 0, z[fl] >= xl[fl], z[fu] <= xu[fu]]
    for k in range(F.nb):
        cons.append(cp.norm(cp.hstack([2 * c[k], 2 * s[k], w[f[k]] - w[t[k]]])) <= w[f[k]] + w[t[k]])
    for k in range(len(F.flow_P)):
        r = model.rate[F.rated][k % len(F.rated)]
        cons.append(cp.norm(cp.hstack([F.flow_P[k] @ z, F.flow_Q[k] @ z])) <= r)
    if len(F.A_lin):
        cons.append(F.A_lin @ z <= 0)
    ls = slice(F.spl.start, F.sql.stop)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(z[ls] - x_hat)), cons)
    prob.solve(solver="CLARABEL")
    return np.asarray(z.value[ls]), float(np.sqrt(max(prob.value, 0.0)))


def random_loads(model, n, rng, lo=0.3, hi=1.1):
    """Loads scaled per coordinate around nominal; q kept within [0, p]."""
    x0 = model.load_vector()
    X = x0 * rng.uniform(lo, hi, size=(n, len(x0)))
    L = model.n_load
    X[:, L:] = np.minimum(np.abs(X[:, L:]), X[:, :L])
    return X


@pytest.fixture(scope="session")
def run5(case5):
    """Small OPF-Learn run on case5: ``(dataset, stats)``."""
    from opflearn.pipeline import RunConfig, create_dataset

    return create_dataset(case5, RunConfig(n_samples=10, seed=1))


@pytest.fixture(scope="session")
def typical5(case5):
    from opflearn.pipeline import typical_dataset

    return typical_dataset(case5, 10, seed=1)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)
