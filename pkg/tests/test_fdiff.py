import numpy as np
import pytest

from bls.errors import NumericDiffFailure
from bls.fdiff import (
    DiffConfig,
    jacobian_fd,
    mixed_scalar_fd,
    scalar_hessian_fd,
    stacked_derivative_fd,
    stacked_second_fd,
    total_gradient_fd,
    total_hessian_fd,
)
from bls.problem import BilevelProblem
from bls.solvers import LowerConfig, solve_lower


class TestJacobian:
    def test_identity_map(self):
        out = jacobian_fd(lambda x: x, np.zeros(3))
        assert np.allclose(out, np.eye(3), atol=1e-10)

    def test_sin_at_zero(self):
        out = jacobian_fd(lambda x: np.sin(x), np.zeros(1))
        assert abs(out[0, 0] - 1.0) < 1e-8

    def test_linear_map_exact(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 3))
        x = rng.normal(size=3)
        out = jacobian_fd(lambda v: a @ v, x)
        assert np.abs(out - a).max() < 1e-8

    def test_quadratic_exact_to_1e9(self):
        # central differences have no error on polynomials of degree <= 2
        rng = np.random.default_rng(1)
        q = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        x = rng.normal(size=3)
        out = jacobian_fd(lambda v: np.array([v @ q @ v + b @ v]), x)
        expected = (q + q.T) @ x + b
        assert np.abs(out.reshape(-1) - expected).max() < 1e-9

    def test_non_finite_detected(self):
        with pytest.raises(NumericDiffFailure):
            jacobian_fd(lambda x: np.array([np.nan]), np.zeros(1))


class TestStackedSecond:
    def test_bilinear_mixed(self):
        g = lambda x, y: np.array([x[0] * y[0]])  # noqa: E731
        out = stacked_second_fd(g, np.array([0.3]), np.array([-0.2]), "xy")
        assert abs(out.block(0)[0, 0] - 1.0) < 1e-6

    def test_cos_second_derivative(self):
        g = lambda z, p: np.array([z[0] - np.cos(p[0])])  # noqa: E731
        p = np.array([0.7])
        out = stacked_second_fd(g, np.array([0.5]), p, "yy")
        assert abs(out.block(0)[0, 0] - np.cos(0.7)) < 1e-5

    def test_linear_gives_zero_blocks(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(3, 2))
        b = rng.normal(size=(3, 4))
        g = lambda x, y: a @ x + b @ y  # noqa: E731
        for which, shape in (("xx", (2, 2)), ("xy", (2, 4)), ("yx", (4, 2)), ("yy", (4, 4))):
            out = stacked_second_fd(g, np.zeros(2), np.zeros(4), which)
            assert out.blocks == 3
            assert out.block(0).shape == shape
            assert np.abs(out.data).max() < 1e-6

    def test_hessian_blocks_symmetric(self):
        g = lambda x, y: np.array([np.sin(x[0]) * x[1] ** 2, np.exp(0.1 * x[0] * x[1])])  # noqa: E731
        out = stacked_second_fd(g, np.array([0.4, -0.3]), np.zeros(1), "xx")
        for i in range(out.blocks):
            blk = out.block(i)
            assert np.abs(blk - blk.T).max() < 1e-5

    def test_mixed_partial_transpose_consistency(self):
        g = lambda x, y: np.array(  # noqa: E731
            [np.sin(x[0] * y[1]) + x[1] * y[0], x[0] * x[1] * y[0] * y[1]]
        )
        x = np.array([0.3, -0.7])
        y = np.array([0.9, 0.2])
        xy = stacked_second_fd(g, x, y, "xy")
        yx = stacked_second_fd(g, x, y, "yx")
        for i in range(xy.blocks):
            assert np.abs(xy.block(i) - yx.block(i).T).max() < 1e-4

    def test_unknown_selector(self):
        with pytest.raises(ValueError):
            stacked_second_fd(lambda x, y: x, np.zeros(1), np.zeros(1), "zz")


def test_scalar_hessian_symmetric_and_accurate():
    f = lambda x: float(np.sin(x[0]) * x[1] + 0.5 * x[1] ** 2 * x[0])  # noqa: E731
    x = np.array([0.3, 1.1])
    h = scalar_hessian_fd(f, x)
    assert np.array_equal(h, h.T)
    expected = np.array(
        [[-np.sin(0.3) * 1.1, np.cos(0.3) + 1.1], [np.cos(0.3) + 1.1, 0.3]]
    )
    assert np.abs(h - expected).max() < 1e-5


def test_mixed_scalar_fd():
    f = lambda x, y: float(x[0] * y[0] ** 2 + 3.0 * x[1] * y[0])  # noqa: E731
    out = mixed_scalar_fd(f, np.array([0.5, -1.0]), np.array([2.0]))
    assert np.allclose(out, [[4.0], [3.0]], atol=1e-5)


def _toy_problem(a_diag):
    a = np.diag(a_diag)
    return BilevelProblem(
        dim_z=len(a_diag),
        dim_p=len(a_diag),
        upper=lambda z, p: float(z @ z),
        fixed_point=lambda z, p: a @ z - p,
    )


class TestTotalDerivativeOracles:
    def test_total_gradient_quadratic_closed_form(self):
        problem = _toy_problem([2.0, 4.0])
        p = np.array([1.0, 2.0])
        solve = lambda q: solve_lower(problem, q, None, LowerConfig(tol=1e-12)).z  # noqa: E731
        out = total_gradient_fd(problem, p, solve)
        a_inv = np.diag([0.5, 0.25])
        expected = 2.0 * (a_inv @ p) @ a_inv
        assert np.abs(out.reshape(-1) - expected).max() < 1e-6

    def test_gradient_crosses_zero_at_scanned_minimum(self, ridge_small=None):
        from bls.problems import make_ridge

        inst = make_ridge(features=6, samples=40, seed=3)
        problem = inst.problem
        solve = lambda q: solve_lower(problem, q, None, LowerConfig(tol=1e-12)).z  # noqa: E731

        def phi(p_scalar):
            q = np.array([p_scalar])
            return float(problem.upper(solve(q), q))

        grid = np.linspace(-4.0, 4.0, 101)
        values = [phi(p) for p in grid]
        best = int(np.argmin(values))
        assert 0 < best < 100, "interior minimum expected"
        g_left = total_gradient_fd(problem, np.array([grid[best - 1]]), solve)[0, 0]
        g_right = total_gradient_fd(problem, np.array([grid[best + 1]]), solve)[0, 0]
        assert g_left < 0.0 < g_right

    def test_upper_independent_of_z(self):
        problem = BilevelProblem(
            dim_z=2,
            dim_p=2,
            upper=lambda z, p: float(p @ p),
            fixed_point=lambda z, p: z,
        )
        p = np.array([0.7, -1.2])
        solve = lambda q: np.zeros(2)  # noqa: E731
        out = total_gradient_fd(problem, p, solve)
        assert np.abs(out.reshape(-1) - 2.0 * p).max() < 1e-9

    def test_total_hessian_fd_quadratic(self):
        problem = _toy_problem([2.0, 4.0])
        p = np.array([1.0, 2.0])
        solve = lambda q: solve_lower(problem, q, None, LowerConfig(tol=1e-12)).z  # noqa: E731
        out = total_hessian_fd(problem, p, solve)
        a_inv = np.diag([0.5, 0.25])
        assert np.abs(out - 2.0 * a_inv @ a_inv).max() < 1e-6


def test_stacked_derivative_fd_linear_matrix_map():
    rng = np.random.default_rng(4)
    slope = rng.normal(size=(3, 2, 2))

    def matrix_fn(p):
        return slope[:, :, 0] * p[0] + slope[:, :, 1] * p[1]

    out = stacked_derivative_fd(matrix_fn, np.array([0.3, -0.8]))
    assert out.blocks == 3
    for i in range(3):
        assert np.abs(out.block(i) - slope[i]).max() < 1e-9


def test_diff_config_validation():
    with pytest.raises(ValueError):
        DiffConfig(step_first=0.0)
