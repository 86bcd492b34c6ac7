import numpy as np
import pytest

from opflearn import nlp

INF = np.inf


def problem(n, f, g, h, cons=None, jac=None, chess=None, xl=None, xu=None, gl=(), gu=(), convex=False):
    """Small dense problem; ``chess(x)`` gives the per-row constraint Hessians."""
    m = len(gl)
    cons = cons or (lambda x: np.zeros(0))
    jac = jac or (lambda x: np.zeros((0, n)))

    def hess(x, lam, of):
        H = of * h(x)
        if m:
            for li, Hi in zip(lam, chess(x)):
                H = H + li * Hi
        return H

    return nlp.NlpProblem(
        n=n, xl=np.full(n, -INF) if xl is None else np.asarray(xl, float),
        xu=np.full(n, INF) if xu is None else np.asarray(xu, float),
        gl=np.asarray(gl, float), gu=np.asarray(gu, float),
        objective=f, gradient=g, constraints=cons, jacobian=jac, hessian=hess, convex=convex)


def kkt_stationarity(prob, sol):
    J = np.atleast_2d(prob.jacobian(sol.x)).reshape(prob.m, prob.n)
    r = prob.gradient(sol.x) + J.T @ sol.lam - sol.zl + sol.zu
    return float(np.max(np.abs(r), initial=0.0))


def square_bound():
    return problem(1, lambda x: float(x[0] ** 2), lambda x: 2 * x, lambda x: 2 * np.eye(1), xl=[1.0], convex=True)


def test_square_with_bound():
    prob = square_bound()
    sol = nlp.solve(prob, None, np.array([3.0]))
    assert sol.ok
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.zl[0] == pytest.approx(2.0, abs=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert kkt_stationarity(prob, sol) <= 1e-6


def test_square_with_row_constraint():
    prob = problem(1, lambda x: float(x[0] ** 2), lambda x: 2 * x, lambda x: 2 * np.eye(1),
                   cons=lambda x: x.copy(), jac=lambda x: np.eye(1), chess=lambda x: [np.zeros((1, 1))],
                   gl=[1.0], gu=[INF], convex=True)
    sol = nlp.solve(prob, None, np.array([3.0]))
    assert sol.ok
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.lam_lower[0] == pytest.approx(2.0, abs=1e-6)
    assert abs(sol.lam[0] * (sol.x[0] - 1.0)) <= 1e-5


def equality_qp():
    return problem(
        2, lambda v: float((v[0] - 2) ** 2 + (v[1] - 1) ** 2), lambda v: 2 * (v - [2.0, 1.0]),
        lambda v: 2 * np.eye(2), cons=lambda v: np.array([v[0] + v[1]]), jac=lambda v: np.ones((1, 2)),
        chess=lambda v: [np.zeros((2, 2))], gl=[1.0], gu=[1.0], convex=True)


def test_equality_qp_analytic():
    # projection of (2, 1) onto x + y = 1 is (1, 0); grad f = -lam grad h gives lam = 2
    prob = equality_qp()
    sol = nlp.solve(prob, None, np.zeros(2))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-6)
    assert sol.lam[0] == pytest.approx(2.0, abs=1e-6)
    assert kkt_stationarity(prob, sol) <= 1e-6


def test_symmetric_chebyshev_lp():
    A = np.array([[1.0, 1.0], [-1.0, 1.0]])
    prob = problem(2, lambda v: -float(v[1]), lambda v: np.array([0.0, -1.0]), lambda v: np.zeros((2, 2)),
                   cons=lambda v: A @ v, jac=lambda v: A, chess=lambda v: [np.zeros((2, 2))] * 2,
                   xl=[-INF, 0.0], gl=[-INF, -INF], gu=[1.0, 1.0], convex=True)
    sol = nlp.solve(prob, None, np.array([0.3, 0.1]))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [0.0, 1.0], atol=1e-6)


def rosenbrock_disk():
    def f(v):
        return float((1 - v[0]) ** 2 + 100 * (v[1] - v[0] ** 2) ** 2)

    def g(v):
        x, y = v
        return np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])

    def h(v):
        x, y = v
        return np.array([[2 - 400 * (y - 3 * x * x), -400 * x], [-400 * x, 200.0]])

    return problem(2, f, g, h, cons=lambda v: np.array([v @ v]), jac=lambda v: 2 * v[None, :],
                   chess=lambda v: [2 * np.eye(2)], gl=[-INF], gu=[2.0])


def test_constrained_rosenbrock():
    # (1, 1) is the unconstrained minimiser and lies on the disk boundary, so the
    # constraint is weakly active with a zero multiplier.  Degenerate
    # complementarity leaves the iterate O(sqrt(mu)) inside, hence the small mu floor.
    prob = rosenbrock_disk()
    sol = nlp.solve(prob, nlp.NlpConfig(tol=1e-9, mu_min=1e-14), np.array([-1.0, 0.5]))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-6)
    assert abs(sol.lam[0]) <= 1e-6
    assert 2.0 - sol.x @ sol.x >= -1e-9
    assert kkt_stationarity(prob, sol) <= 1e-9


def test_rosenbrock_strict_interior_disk():
    # with radius^2 = 3 the constraint is strictly inactive
    prob = rosenbrock_disk()
    prob.gu = np.array([3.0])
    sol = nlp.solve(prob, None, np.array([-1.0, 0.5]))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-6)
    assert abs(sol.lam[0]) <= 1e-6


def test_complementarity_on_active_inequalities():
    # min x + y s.t. x^2 + y^2 <= 1, x >= -0.5
    prob = problem(2, lambda v: float(v.sum()), lambda v: np.ones(2), lambda v: np.zeros((2, 2)),
                   cons=lambda v: np.array([v @ v]), jac=lambda v: 2 * v[None, :],
                   chess=lambda v: [2 * np.eye(2)], xl=[-0.5, -INF], gl=[-INF], gu=[1.0], convex=True)
    sol = nlp.solve(prob, nlp.NlpConfig(tol=1e-8), np.zeros(2))
    assert sol.ok
    g = sol.x @ sol.x - 1.0
    assert abs(sol.lam[0] * g) <= 1e-7
    assert abs(sol.zl[0] * (sol.x[0] + 0.5)) <= 1e-7
    assert kkt_stationarity(prob, sol) <= 1e-8
    # the free optimum (-1/sqrt2, -1/sqrt2) violates x >= -0.5, so both are active
    np.testing.assert_allclose(sol.x, [-0.5, -np.sqrt(0.75)], atol=1e-7)


def test_convex_random_starts_agree():
    prob = equality_qp()
    rng = np.random.default_rng(0)
    objs = [nlp.solve(prob, None, rng.uniform(-5, 5, 2)).objective for _ in range(5)]
    assert max(objs) - min(objs) <= 1e-5 * max(1.0, abs(objs[0]))


def test_deterministic_bitwise():
    prob = rosenbrock_disk()
    a = nlp.solve(prob, None, np.array([-1.0, 0.5]))
    b = nlp.solve(prob, None, np.array([-1.0, 0.5]))
    assert a.iterations == b.iterations
    assert a.x.tobytes() == b.x.tobytes() and a.lam.tobytes() == b.lam.tobytes()


def test_locally_infeasible_convex():
    # x >= 1 and x <= 0 as rows
    prob = problem(1, lambda x: float(x[0] ** 2), lambda x: 2 * x, lambda x: 2 * np.eye(1),
                   cons=lambda x: np.array([x[0], x[0]]), jac=lambda x: np.ones((2, 1)),
                   chess=lambda x: [np.zeros((1, 1))] * 2, gl=[1.0, -INF], gu=[INF, 0.0], convex=True)
    sol = nlp.solve(prob, None, np.array([0.5]))
    assert sol.status == nlp.LOCALLY_INFEASIBLE


def test_iteration_limit():
    sol = nlp.solve(rosenbrock_disk(), nlp.NlpConfig(max_iter=2), np.array([-1.0, 0.5]))
    assert sol.status == nlp.ITERATION_LIMIT


def test_config_validation():
    with pytest.raises(ValueError):
        nlp.NlpConfig(tol=0.0)
    with pytest.raises(ValueError):
        nlp.NlpConfig(max_iter=0)


def test_start_outside_bounds_is_pushed_inside():
    sol = nlp.solve(square_bound(), None, np.array([-4.0]))
    assert sol.ok and sol.x[0] == pytest.approx(1.0, abs=1e-6)
