import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropirls.solver import (QuadraticProblem, SmoothObjective, SolverWarning, check_gradient, minimize_lbfgs,
                             solve_normal_equations)


def bowl(a):
    a = np.asarray(a, dtype=float)
    return SmoothObjective(lambda x: (float((x - a) @ (x - a)), 2 * (x - a)), a.size)


def rosenbrock():
    def fun(x):
        f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
        g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
        return f, g
    return SmoothObjective(fun, 2)


def random_spd(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def test_identity_system():
    p = QuadraticProblem(np.zeros((2, 2)), np.array([3.0, 4.0]), ridge=1.0)
    np.testing.assert_allclose(solve_normal_equations(p), [3.0, 4.0])


def test_one_dimensional_hand_computation():
    # one example x=2, dropout q=0.5, c=1, hinge weight gamma=0.5 ->
    # (2/c^2 + gamma E[x~^2]) w = gamma * x * t with E[x~^2] = x^2 / (1 - q)
    c, gamma, x, q, t = 1.0, 0.5, 2.0, 0.5, 3.0
    gram = np.array([[gamma * x * x / (1 - q)]])
    p = QuadraticProblem(gram, np.array([gamma * x * t]), ridge=2 / c**2)
    assert solve_normal_equations(p)[0] == pytest.approx(gamma * x * t / (2 / c**2 + gamma * x * x / (1 - q)))


def test_random_spd_residual():
    A = random_spd(20, 0)
    b = np.random.default_rng(1).normal(size=20)
    x = solve_normal_equations(QuadraticProblem(A, b, ridge=1e-3))
    assert np.linalg.norm((A + 1e-3 * np.eye(20)) @ x - b) <= 1e-8


def test_unpenalized_coordinate():
    p = QuadraticProblem(np.eye(3), np.ones(3), ridge=1.0, unpenalized=(2,))
    np.testing.assert_allclose(solve_normal_equations(p), [0.5, 0.5, 1.0])


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        QuadraticProblem(np.eye(2), np.ones(3), ridge=1.0)
    with pytest.raises(ValueError):
        QuadraticProblem(np.eye(2), np.ones(2), ridge=0.0)


def test_singular_gram_falls_back_with_warning():
    p = QuadraticProblem(np.zeros((2, 2)), np.array([1.0, 0.0]), ridge=1.0, unpenalized=(1,))
    with pytest.warns(SolverWarning):
        x = solve_normal_equations(p)
    assert x[0] == pytest.approx(1.0, abs=1e-8)


def test_lbfgs_quadratic_bowl():
    x, f = minimize_lbfgs(bowl([1.0, 2.0, 3.0]), np.zeros(3), tol=1e-8)
    np.testing.assert_allclose(x, [1, 2, 3], atol=1e-6)
    assert f <= 1e-12


def test_lbfgs_rosenbrock():
    x, _ = minimize_lbfgs(rosenbrock(), np.array([-1.2, 1.0]), tol=1e-8, max_iter=500)
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-4)


def test_lbfgs_agrees_with_normal_equations():
    A = random_spd(15, 2)
    b = np.random.default_rng(3).normal(size=15)
    p = QuadraticProblem(A, b, ridge=0.5, unpenalized=(14,))
    direct = solve_normal_equations(p)
    x, _ = minimize_lbfgs(p.as_objective(), np.zeros(15), tol=1e-10, max_iter=1000)
    assert np.linalg.norm(x - direct) <= 1e-5 * np.linalg.norm(direct)


def test_lbfgs_warns_on_iteration_cap():
    with pytest.warns(SolverWarning):
        minimize_lbfgs(rosenbrock(), np.array([-1.2, 1.0]), tol=1e-12, max_iter=3)


def test_lbfgs_never_increases():
    x0 = np.array([-1.2, 1.0])
    f0, _ = rosenbrock()(x0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SolverWarning)
        for it in (1, 2, 5, 20):
            _, f = minimize_lbfgs(rosenbrock(), x0, max_iter=it)
            assert f <= f0


def test_check_gradient_quadratic_and_corrupted():
    A = random_spd(6, 4)
    obj = QuadraticProblem(A, np.ones(6), ridge=1.0).as_objective()
    x = np.random.default_rng(5).normal(size=6)
    assert check_gradient(obj, x) <= 1e-6

    def broken(v):
        f, g = obj(v)
        g = g.copy()
        g[2] *= 2
        return f, g

    assert check_gradient(SmoothObjective(broken, 6), x) >= 0.3


def test_check_gradient_step_bounds():
    with pytest.raises(ValueError):
        check_gradient(bowl([1.0]), np.zeros(1), h=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10**6), st.floats(1e-3, 1e3))
def test_normal_equations_residual_property(n, seed, ridge):
    A = random_spd(n, seed)
    b = np.random.default_rng(seed + 1).normal(size=n)
    x = solve_normal_equations(QuadraticProblem(A, b, ridge=ridge))
    M = A + ridge * np.eye(n)
    assert np.linalg.norm(M @ x - b) <= 1e-8 * max(1.0, np.linalg.norm(b)) * np.linalg.cond(M)
