import numpy as np
import pytest

from sipgains import NlpProblem, SolverSettings, check_kkt, fd_gradient, multi_start_solve, solve
from sipgains.errors import GradientFailure, InvalidStart

TOL = 1e-4


def rosenbrock():
    return NlpProblem(2, [-np.inf] * 2, [np.inf] * 2,
                      objective=lambda z: (1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2)


def clipped_parabola():
    return NlpProblem(1, [-np.inf], [np.inf], objective=lambda z: (z[0] - 3) ** 2,
                      ineq_constraints=[lambda z: z[0] - 1])


def circle_linear():
    return NlpProblem(2, [-np.inf] * 2, [np.inf] * 2, objective=lambda z: z[0] + z[1],
                      eq_constraints=[lambda z: z[0] ** 2 + z[1] ** 2 - 1])


def wavy():
    return NlpProblem(1, [-3.0], [3.0], objective=lambda z: np.cos(3 * z[0]) + 0.1 * z[0] ** 2)


both_methods = pytest.mark.parametrize("method", ["al", "sqp"])


@both_methods
def test_clipped_parabola(method):
    r = solve(clipped_parabola(), [0.0], SolverSettings(method=method))
    assert r.converged
    assert r.z_star[0] == pytest.approx(1.0, abs=TOL)
    assert r.objective_value == pytest.approx(4.0, abs=TOL)


@both_methods
def test_rosenbrock(method):
    r = solve(rosenbrock(), [-1.2, 1.0], SolverSettings(method=method))
    assert r.converged
    np.testing.assert_allclose(r.z_star, [1.0, 1.0], atol=TOL)
    assert r.objective_value <= 1e-8


@both_methods
def test_equality_constrained_linear(method):
    r = solve(circle_linear(), [0.5, -0.2], SolverSettings(method=method))
    assert r.converged
    np.testing.assert_allclose(r.z_star, [-np.sqrt(0.5)] * 2, atol=TOL)


@both_methods
@pytest.mark.parametrize("make", [rosenbrock, clipped_parabola, circle_linear])
def test_independent_kkt_replay(make, method):
    prob = make()
    r = solve(prob, np.zeros(prob.n_vars) + 0.3, SolverSettings(method=method))
    kkt = check_kkt(prob, r.z_star, (r.multipliers_eq, r.multipliers_ineq))
    assert kkt <= 1e-6
    assert abs(kkt - r.kkt_residual) <= 1e-12


def test_kkt_quadratic_vertex():
    prob = NlpProblem(2, [-np.inf] * 2, [np.inf] * 2, objective=lambda z: (z[0] - 1) ** 2 + 2 * (z[1] + 2) ** 2)
    assert check_kkt(prob, [1.0, -2.0], (np.zeros(0), np.zeros(0))) <= 1e-10


def test_kkt_far_from_optimum():
    assert check_kkt(rosenbrock(), [-1.0, 3.0], (np.zeros(0), np.zeros(0))) > 1e-6


def test_grid_oracle_multistart():
    # 1e4-point grid oracle over [-3, 3]
    grid = np.linspace(-3, 3, 10_000)
    oracle = float(np.min(np.cos(3 * grid) + 0.1 * grid ** 2))
    assert oracle == pytest.approx(-0.8927, abs=1e-4)
    best = multi_start_solve(wavy(), SolverSettings(rng_seed=3))
    assert best.objective_value == pytest.approx(oracle, abs=1e-4)
    single = solve(wavy(), [0.0])
    assert single.objective_value > oracle + 0.5


def test_convex_multistart_matches_single():
    prob = NlpProblem(2, [-5.0] * 2, [5.0] * 2, objective=lambda z: (z[0] - 1) ** 2 + (z[1] + 2) ** 2)
    a = multi_start_solve(prob)
    b = solve(prob, [0.0, 0.0])
    np.testing.assert_allclose(a.z_star, b.z_star, atol=1e-7)


def test_determinism():
    s = SolverSettings(rng_seed=11)
    a, b = multi_start_solve(wavy(), s), multi_start_solve(wavy(), s)
    assert np.array_equal(a.z_star, b.z_star) and a.objective_value == b.objective_value
    a, b = solve(circle_linear(), [0.5, 0.5]), solve(circle_linear(), [0.5, 0.5])
    assert np.array_equal(a.z_star, b.z_star) and a.excess_history == b.excess_history


@pytest.mark.parametrize("make", [clipped_parabola, circle_linear])
def test_feasible_descent(make):
    r = solve(make(), [2.5] * make().n_vars)
    h = np.array(r.excess_history)
    assert np.all(np.diff(h) <= 1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_invalid_start():
    prob = NlpProblem(1, [-1.0], [1.0], objective=lambda z: np.log(z[0]))
    with pytest.raises(InvalidStart):
        solve(prob, [-0.5])


def test_unknown_method():
    from sipgains import InvalidInputError
    with pytest.raises(InvalidInputError):
        SolverSettings(method="newton")


def test_sqp_bound_active_multipliers():
    # optimum on the upper bound of z0 with an active inequality
    prob = NlpProblem(2, [-5.0, -5.0], [1.0, 5.0], objective=lambda z: -z[0] - z[1],
                      ineq_constraints=[lambda z: z[1] - 2 * z[0]])
    r = solve(prob, [0.0, 0.0], SolverSettings(method="sqp"))
    assert r.converged
    np.testing.assert_allclose(r.z_star, [1.0, 2.0], atol=1e-7)
    assert r.multipliers_ineq[0] == pytest.approx(1.0, abs=1e-6)


def test_truthful_max_iters():
    r = solve(rosenbrock(), [-1.2, 1.0], SolverSettings(max_outer_iters=1, max_inner_iters=2))
    assert r.status == "max_iters"


def test_batch_problem_matches_scalar_form():
    def batch_eval(Z):
        return Z[:, 0] + Z[:, 1], (Z[:, 0] ** 2 + Z[:, 1] ** 2 - 1)[:, None], np.zeros((len(Z), 0))
    prob = NlpProblem(2, [-np.inf] * 2, [np.inf] * 2, batch_eval=batch_eval, n_eq=1, n_ineq=0)
    a = solve(prob, [0.5, -0.2])
    b = solve(circle_linear(), [0.5, -0.2])
    np.testing.assert_allclose(a.z_star, b.z_star, atol=1e-9)


# fd_gradient against analytic gradients
SMOOTH = [
    (lambda z: z[0] ** 2, lambda z: np.array([2 * z[0]]), [3.0]),
    (lambda z: z[0] * z[1], lambda z: np.array([z[1], z[0]]), [2.0, 5.0]),
    (lambda z: np.sin(z[0]) * np.cos(z[1]), lambda z: np.array([np.cos(z[0]) * np.cos(z[1]), -np.sin(z[0]) * np.sin(z[1])]), [0.4, 1.1]),
    (lambda z: np.exp(z[0] + 2 * z[1]), lambda z: np.exp(z[0] + 2 * z[1]) * np.array([1.0, 2.0]), [0.1, -0.3]),
    (lambda z: np.log(1 + z[0] ** 2), lambda z: np.array([2 * z[0] / (1 + z[0] ** 2)]), [0.7]),
    (lambda z: np.sum(z ** 4), lambda z: 4 * z ** 3, [1.0, -2.0, 0.5]),
    (lambda z: (1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2,
     lambda z: np.array([-2 * (1 - z[0]) - 400 * z[0] * (z[1] - z[0] ** 2), 200 * (z[1] - z[0] ** 2)]), [-1.2, 1.0]),
    (lambda z: np.sqrt(1 + z @ z), lambda z: z / np.sqrt(1 + z @ z), [0.3, 0.4, -1.2]),
    (lambda z: np.tanh(z[0]) * z[1] ** 3, lambda z: np.array([(1 - np.tanh(z[0]) ** 2) * z[1] ** 3, 3 * np.tanh(z[0]) * z[1] ** 2]), [0.5, 1.5]),
    (lambda z: 1.0 / (1.0 + np.exp(-z[0] * z[1])),
     lambda z: (lambda s: s * (1 - s) * np.array([z[1], z[0]]))(1.0 / (1.0 + np.exp(-z[0] * z[1]))), [0.8, -0.6]),
]


@pytest.mark.parametrize("f,grad,z", SMOOTH)
def test_fd_gradient_matches_analytic(f, grad, z):
    z = np.asarray(z, dtype=float)
    g = fd_gradient(f, z, 1e-6)
    exact = grad(z)
    assert np.max(np.abs(g - exact)) <= 1e-5 * max(1.0, np.max(np.abs(exact)))


def test_fd_gradient_constant():
    assert np.all(fd_gradient(lambda z: 4.2, np.array([1.0, 2.0])) == 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fd_gradient_failure():
    with pytest.raises(GradientFailure):
        fd_gradient(lambda z: np.log(z[0]), np.array([0.0]))
