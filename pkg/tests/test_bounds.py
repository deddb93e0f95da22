import dataclasses

import numpy as np
import pytest

from bls.bounds import (
    BoundConstants,
    estimate_constants,
    first_order_bound,
    optimize_epsilon,
    regularized_bound,
    second_order_bound,
)
from bls.errors import InfiniteBoundError
from bls.ift import ift_hessian, ift_jacobian
from bls.problem import first_bundle, second_bundle
from bls.solvers import LowerConfig, solve_lower

TIGHT = LowerConfig(tol=1e-12)


def constants(**kwargs) -> BoundConstants:
    base = dict(
        delta=0.0, alpha1=1.0, alpha2=1.0, beta=0.0, gamma=0.0, R=0.0,
        zeta=0.0, eta=0.0, nu=0.0, kappa_J=0.0, R_H=0.0, epsilon=0.0,
    )
    base.update(kwargs)
    return BoundConstants(**base)


class TestEstimateConstants:
    def test_exact_solution_gives_zero_delta(self, ridge_small):
        problem = ridge_small.problem
        z = solve_lower(problem, ridge_small.p0, None, TIGHT).z
        c = estimate_constants(problem, z, z, ridge_small.p0)
        assert c.delta == 0.0
        assert c.beta == 0.0 and c.gamma == 0.0
        assert first_order_bound(c) == 0.0

    def test_linear_root_map_has_constant_derivatives(self, toy):
        problem = toy.problem
        p = np.array([0.5, 0.5, 0.5, 0.5])
        z_star = solve_lower(problem, p, None, TIGHT).z
        z = z_star + 1e-3 * np.ones(4) / 2.0
        c = estimate_constants(problem, z, z_star, p)
        assert c.gamma == 0.0
        # dp_k = -I is constant in z as well
        assert c.beta == 0.0
        assert first_order_bound(c) == 0.0

    def test_ridge_constants_reproducible(self, ridge_small):
        problem = ridge_small.problem
        z_star = solve_lower(problem, ridge_small.p0, None, TIGHT).z
        rng = np.random.default_rng(5)
        u = rng.normal(size=problem.dim_z)
        u /= np.linalg.norm(u)
        z = z_star + 1e-3 * u
        c1 = estimate_constants(problem, z, z_star, ridge_small.p0)
        c2 = estimate_constants(problem, z, z_star, ridge_small.p0)
        for name in ("delta", "alpha1", "alpha2", "beta", "gamma", "R", "zeta", "eta", "nu"):
            v1, v2 = getattr(c1, name), getattr(c2, name)
            assert v1 == pytest.approx(v2, rel=1e-3)
            assert np.isfinite(v1)

    def test_kappa_from_first_order_bound(self):
        c = constants(delta=0.1, beta=1.0, gamma=1.0, R=1.0)
        # kappa is the first-order bound divided by delta, an a-priori chain
        est = c.beta / c.alpha1 + c.gamma * c.R / (c.alpha1 * c.alpha2)
        assert first_order_bound(c) / c.delta == pytest.approx(est)


class TestFirstOrderBound:
    def test_zero_delta(self):
        assert first_order_bound(constants()) == 0.0

    def test_substitution(self):
        c = constants(delta=0.1, beta=1.0, gamma=1.0, R=1.0)
        assert first_order_bound(c) == pytest.approx(0.2)

    def test_constant_derivatives_zero_bound(self):
        c = constants(delta=5.0, beta=0.0, gamma=0.0, R=3.0)
        assert first_order_bound(c) == 0.0

    def test_infinite_on_zero_gain(self):
        with pytest.raises(InfiniteBoundError):
            first_order_bound(constants(alpha1=0.0))


class TestSecondOrderBound:
    def test_zero_delta(self):
        assert second_order_bound(constants()) == 0.0

    def test_linear_zero(self):
        c = constants(delta=0.3, zeta=0.0, eta=0.0, nu=0.0, gamma=0.0, R_H=2.0)
        assert second_order_bound(c) == 0.0

    def test_substitution(self):
        c = constants(delta=0.1, zeta=1.0, eta=1.0, nu=1.0, kappa_J=2.0, R_H=1.0, gamma=1.0)
        # (1 + 4 + 4) * 0.1 + 1 * 1 * 0.1 = 1.0
        assert second_order_bound(c) == pytest.approx(1.0)


class TestRegularizedBound:
    def test_epsilon_zero_reduces_exactly(self, ridge_small):
        problem = ridge_small.problem
        z_star = solve_lower(problem, ridge_small.p0, None, TIGHT).z
        z = z_star + 1e-3 * np.ones(problem.dim_z) / np.sqrt(problem.dim_z)
        c = estimate_constants(problem, z, z_star, ridge_small.p0)
        c0 = dataclasses.replace(c, epsilon=0.0)
        assert regularized_bound(c0) == first_order_bound(c0)

    def test_substitution(self):
        c = constants(delta=0.0, R=1.0, epsilon=1.0)
        assert regularized_bound(c) == pytest.approx(0.5)

    def test_decreasing_when_gamma_dominates(self):
        c = constants(delta=1.0, beta=0.0, gamma=10.0, R=1.0, alpha1=0.1)
        values = [regularized_bound(dataclasses.replace(c, epsilon=e)) for e in (0.0, 0.1, 1.0)]
        assert values[0] > values[1] > values[2]


class TestOptimizeEpsilon:
    def test_grid_scan_is_its_own_oracle(self):
        c = constants(delta=0.2, beta=2.0, gamma=0.0, R=1.0, alpha1=0.5)
        eps_star, val = optimize_epsilon(c, eps_max=10.0)
        grid = np.concatenate(([0.0], 10.0 * np.logspace(-12, 0, 200)))
        vals = [regularized_bound(dataclasses.replace(c, epsilon=float(e))) for e in grid]
        assert val <= min(vals) + 1e-15
        assert val <= regularized_bound(dataclasses.replace(c, epsilon=0.0))

    def test_monotone_regime_boundary_minimizer(self):
        # beta = 0 and gamma delta R / alpha2 decreasing => minimizer at eps_max;
        # the bound is a ratio of affine functions of eps, so it is monotone
        c = constants(delta=1.0, beta=0.0, gamma=5.0, R=1.0, alpha1=0.1, alpha2=1.0)
        eps_star, val = optimize_epsilon(c, eps_max=100.0)
        assert eps_star == pytest.approx(100.0)
        vals = [regularized_bound(dataclasses.replace(c, epsilon=float(e)))
                for e in np.linspace(0.0, 100.0, 50)]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_degenerate_delta_zero(self):
        c = constants(delta=0.0, R=1.0)
        eps_star, val = optimize_epsilon(c, eps_max=1.0)
        assert eps_star == 0.0
        assert val == 0.0

    def test_never_exceeds_unregularized(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            c = constants(
                delta=float(rng.uniform(0, 1)),
                beta=float(rng.uniform(0, 5)),
                gamma=float(rng.uniform(0, 5)),
                R=float(rng.uniform(0, 5)),
                alpha1=float(rng.uniform(0.01, 2)),
                alpha2=float(rng.uniform(0.01, 2)),
            )
            _, val = optimize_epsilon(c, eps_max=float(rng.uniform(0.1, 100)))
            assert val <= regularized_bound(dataclasses.replace(c, epsilon=0.0)) + 1e-15


class TestValidityAndRate:
    def test_bounds_cover_measured_errors(self, ridge_small):
        problem = ridge_small.problem
        p = ridge_small.p0
        z_star = solve_lower(problem, p, None, TIGHT).z
        fb_s = first_bundle(problem, z_star, p)
        sb_s = second_bundle(problem, z_star, p)
        sens_s = ift_jacobian(fb_s)
        hess_s = ift_hessian(fb_s, sb_s, sens_s)
        rng = np.random.default_rng(7)
        for delta in (1e-2, 1e-3, 1e-4):
            for _ in range(20):
                u = rng.normal(size=problem.dim_z)
                u /= np.linalg.norm(u)
                z = z_star + delta * u
                fb = first_bundle(problem, z, p)
                sb = second_bundle(problem, z, p)
                sens = ift_jacobian(fb)
                hess = ift_hessian(fb, sb, sens)
                c = estimate_constants(problem, z, z_star, p)
                assert np.linalg.norm(sens.dp_z - sens_s.dp_z, "fro") <= first_order_bound(c)
                assert np.linalg.norm(hess.data - hess_s.data, "fro") <= second_order_bound(c)

    def test_bounds_shrink_linearly_in_delta(self, ridge_small):
        problem = ridge_small.problem
        p = ridge_small.p0
        z_star = solve_lower(problem, p, None, TIGHT).z
        rng = np.random.default_rng(8)
        u = rng.normal(size=problem.dim_z)
        u /= np.linalg.norm(u)
        deltas = np.logspace(-5, -2, 7)
        b1, b2 = [], []
        for d in deltas:
            c = estimate_constants(problem, z_star + d * u, z_star, p)
            b1.append(first_order_bound(c))
            b2.append(second_order_bound(c))
        slope1 = np.polyfit(np.log(deltas), np.log(b1), 1)[0]
        slope2 = np.polyfit(np.log(deltas), np.log(b2), 1)[0]
        assert slope1 >= 0.9
        assert slope2 >= 0.9
