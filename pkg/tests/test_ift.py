import numpy as np
import pytest

from bls import fdiff
from bls.errors import SingularSystemError
from bls.ift import (
    hessian_bracket,
    ift_hessian,
    ift_jacobian,
    sensitivity_vector,
    total_gradient,
    total_hessian,
)
from bls.linalg import count_ops, kron_left_apply
from bls.problem import BilevelProblem, first_bundle, second_bundle
from bls.solvers import LowerConfig, solve_lower

from conftest import rel_err

TIGHT = LowerConfig(tol=1e-12)


def pipeline(problem, p, z0=None):
    sol = solve_lower(problem, p, z0, TIGHT)
    assert sol.converged
    fb = first_bundle(problem, sol.z, p)
    sb = second_bundle(problem, sol.z, p)
    sens = ift_jacobian(fb)
    return sol.z, fb, sb, sens


def tight_solver(problem, z_warm=None):
    def solve(q):
        return solve_lower(problem, q, z_warm, TIGHT).z

    return solve


class TestIftJacobian:
    def test_diagonal_closed_form(self):
        problem = BilevelProblem(
            dim_z=2,
            dim_p=2,
            upper=lambda z, p: float(z @ z),
            fixed_point=lambda z, p: np.diag([2.0, 4.0]) @ z - p,
        )
        _, _, _, sens = pipeline(problem, np.array([1.0, 1.0]))
        assert np.allclose(sens.dp_z, np.diag([0.5, 0.25]), atol=1e-12)

    def test_cos_at_half_pi(self, cosfix):
        p = np.array([np.pi / 2.0])
        _, _, _, sens = pipeline(cosfix.problem, p)
        assert sens.dp_z[0, 0] == pytest.approx(-1.0, abs=1e-12)

    def test_parameter_independent_root(self):
        problem = BilevelProblem(
            dim_z=2,
            dim_p=3,
            upper=lambda z, p: float(z @ z),
            fixed_point=lambda z, p: z - 1.0,
        )
        _, _, _, sens = pipeline(problem, np.zeros(3), np.ones(2))
        assert np.abs(sens.dp_z).max() == 0.0

    def test_singular_suggests_ridge(self):
        fb = first_bundle(
            BilevelProblem(
                dim_z=2,
                dim_p=1,
                upper=lambda z, p: 0.0,
                fixed_point=lambda z, p: np.array([z[0] + z[1], z[0] + z[1]]),
            ),
            np.zeros(2),
            np.zeros(1),
        )
        with pytest.raises(SingularSystemError, match="epsilon"):
            ift_jacobian(fb)
        sens = ift_jacobian(fb, epsilon=1e-3)
        assert sens.epsilon == 1e-3
        assert np.all(np.isfinite(sens.dp_z))

    def test_implicit_equation_residual(self, ridge_small, diag_small, lqr):
        for inst in (ridge_small, diag_small, lqr):
            _, fb, _, sens = pipeline(inst.problem, inst.p0, inst.z0)
            resid = fb.dz_k @ sens.dp_z + fb.dp_k
            assert np.linalg.norm(resid, "fro") <= 1e-8 * np.linalg.norm(fb.dp_k, "fro")


class TestIftHessian:
    def test_linear_root_map_gives_exact_zero(self, toy):
        _, fb, sb, sens = pipeline(toy.problem, np.array([1.0, -2.0, 0.5, 0.25]))
        hess = ift_hessian(fb, sb, sens)
        assert np.abs(hess.data).max() == 0.0

    def test_cos_closed_form(self, cosfix):
        p = np.zeros(1)
        _, fb, sb, sens = pipeline(cosfix.problem, p)
        hess = ift_hessian(fb, sb, sens)
        assert hess.block(0)[0, 0] == pytest.approx(-1.0, abs=1e-12)

    def test_ridge_matches_fd_of_jacobian(self, ridge_small):
        problem = ridge_small.problem
        p = ridge_small.p0
        z, fb, sb, sens = pipeline(problem, p)
        hess = ift_hessian(fb, sb, sens)

        def jac_at(q):
            zq = solve_lower(problem, q, z, TIGHT).z
            return ift_jacobian(first_bundle(problem, zq, q)).dp_z

        fd = fdiff.stacked_derivative_fd(jac_at, p)
        assert rel_err(hess.data, fd.data) < 1e-4

    def test_bracket_residual(self, ridge_small, diag_small, cosfix):
        # the solved stacked system satisfies its defining equation
        for inst in (ridge_small, diag_small, cosfix):
            _, fb, sb, sens = pipeline(inst.problem, inst.p0, inst.z0)
            bracket = hessian_bracket(fb, sb, sens)
            hess = ift_hessian(fb, sb, sens)
            resid = kron_left_apply(fb.dz_k, hess).data + bracket.data
            assert np.linalg.norm(resid) <= 1e-7 * max(np.linalg.norm(bracket.data), 1e-30)

    def test_block_symmetry(self, diag_small):
        _, fb, sb, sens = pipeline(diag_small.problem, diag_small.p0)
        hess = ift_hessian(fb, sb, sens)
        for i in range(hess.blocks):
            blk = hess.block(i)
            assert np.abs(blk - blk.T).max() < 1e-6 * max(1.0, np.abs(blk).max())


class TestSensitivityVector:
    def test_zero_upper_gradient(self, toy):
        _, fb, _, sens = pipeline(toy.problem, toy.known_optimum["p"])
        # at the optimum z = z_target, the upper gradient vanishes
        assert np.abs(fb.dz_fu).max() < 1e-9
        v = sensitivity_vector(fb, sens)
        assert np.abs(v).max() < 1e-9

    def test_identity_root_jacobian(self):
        problem = BilevelProblem(
            dim_z=2,
            dim_p=2,
            upper=lambda z, p: float(z @ z),
            fixed_point=lambda z, p: z - p,
        )
        _, fb, _, sens = pipeline(problem, np.array([0.3, -0.4]))
        v = sensitivity_vector(fb, sens)
        assert np.allclose(v, fb.dz_fu.reshape(-1))

    def test_diagonal_solve(self):
        problem = BilevelProblem(
            dim_z=2,
            dim_p=2,
            upper=lambda z, p: float(np.sum(z)),
            fixed_point=lambda z, p: np.diag([2.0, 4.0]) @ z - p,
        )
        _, fb, _, sens = pipeline(problem, np.ones(2))
        v = sensitivity_vector(fb, sens)
        assert np.allclose(v, [0.5, 0.25])


class TestTotalGradient:
    def test_no_implicit_part(self):
        problem = BilevelProblem(
            dim_z=1,
            dim_p=2,
            upper=lambda z, p: float(p @ p),
            fixed_point=lambda z, p: z,
        )
        _, fb, _, sens = pipeline(problem, np.array([0.5, -1.0]))
        assert np.abs(fb.dz_fu).max() < 1e-12
        g = total_gradient(fb, sens)
        assert np.allclose(g, fb.dp_fu)

    def test_quadratic_closed_form(self):
        a = np.diag([2.0, 4.0])
        problem = BilevelProblem(
            dim_z=2,
            dim_p=2,
            upper=lambda z, p: float(z @ z),
            fixed_point=lambda z, p: a @ z - p,
        )
        p = np.array([1.0, 3.0])
        _, fb, _, sens = pipeline(problem, p)
        a_inv = np.diag([0.5, 0.25])
        expected = (2.0 * (a_inv @ p) @ a_inv).reshape(1, -1)
        assert np.allclose(total_gradient(fb, sens), expected, atol=1e-10)

    def test_ridge_matches_fd(self, ridge_small):
        problem = ridge_small.problem
        z, fb, _, sens = pipeline(problem, ridge_small.p0)
        g = total_gradient(fb, sens)
        g_fd = fdiff.total_gradient_fd(problem, ridge_small.p0, tight_solver(problem, z))
        assert rel_err(g, g_fd) < 1e-5


class TestTotalHessian:
    def test_linear_root_convex_upper_is_psd(self, toy):
        p = np.array([0.3, 0.1, -0.2, 0.9])
        _, fb, sb, sens = pipeline(toy.problem, p)
        h = total_hessian(fb, sb, sens)
        j = sens.dp_z
        assert np.allclose(h, j.T @ sb.hz_fu @ j, atol=1e-12)
        assert np.linalg.eigvalsh(h).min() >= -1e-10

    def test_scalar_chain_rule(self, cosfix):
        _, fb, sb, sens = pipeline(cosfix.problem, np.zeros(1))
        h = total_hessian(fb, sb, sens)
        assert h[0, 0] == pytest.approx(-2.0, abs=1e-12)

    def test_ridge_matches_fd(self, ridge_small):
        problem = ridge_small.problem
        z, fb, sb, sens = pipeline(problem, ridge_small.p0)
        h = total_hessian(fb, sb, sens)
        h_fd = fdiff.total_hessian_fd(problem, ridge_small.p0, tight_solver(problem, z))
        assert rel_err(h, h_fd) < 1e-4

    def test_fast_equals_full(self, toy, cosfix, ridge_small, diag_small, lqr):
        for inst in (toy, cosfix, ridge_small, diag_small, lqr):
            _, fb, sb, sens = pipeline(inst.problem, inst.p0, inst.z0)
            fast = total_hessian(fb, sb, sens, strategy="fast")
            full = total_hessian(fb, sb, sens, strategy="full")
            assert rel_err(fast, full) < 1e-9 or np.abs(fast - full).max() < 1e-12

    def test_symmetric_output(self, diag_small):
        _, fb, sb, sens = pipeline(diag_small.problem, diag_small.p0)
        h = total_hessian(fb, sb, sens, mode="general")
        assert np.array_equal(h, h.T)

    def test_mode_validation(self, cosfix):
        _, fb, sb, sens = pipeline(cosfix.problem, cosfix.p0)
        with pytest.raises(ValueError):
            total_hessian(fb, sb, sens, mode="bogus")
        with pytest.raises(ValueError):
            total_hessian(fb, sb, sens, strategy="bogus")


class TestMixedPartialArbitration:
    """Upper objectives with direct z-p coupling need the cross terms.

    The finite-difference oracle decides: the general mode must match it,
    and dropping the cross terms must visibly miss.
    """

    def _coupled_problem(self):
        a = np.diag([2.0, 5.0])
        m_couple = np.array([[0.7, -0.3], [0.2, 0.4]])
        return BilevelProblem(
            dim_z=2,
            dim_p=2,
            upper=lambda z, p: float(z @ z + z @ m_couple @ p),
            fixed_point=lambda z, p: a @ z - p,
        )

    def test_general_matches_fd_and_paper_exact_differs(self):
        problem = self._coupled_problem()
        p = np.array([0.4, -0.9])
        z, fb, sb, sens = pipeline(problem, p)
        h_general = total_hessian(fb, sb, sens, mode="general")
        h_exactmode = total_hessian(fb, sb, sens, mode="paper_exact")
        h_fd = fdiff.total_hessian_fd(problem, p, tight_solver(problem, z))
        assert rel_err(h_general, h_fd) < 1e-4
        assert rel_err(h_exactmode, h_fd) > 1e-2


class TestCostContracts:
    def test_single_factorization_and_few_solves(self, diag_small):
        problem = diag_small.problem
        p = diag_small.p0
        sol = solve_lower(problem, p, None, TIGHT)
        fb = first_bundle(problem, sol.z, p)
        sb = second_bundle(problem, sol.z, p)
        with count_ops() as ops:
            sens = ift_jacobian(fb)
            total_hessian(fb, sb, sens, strategy="fast")
        assert ops.factorizations == 1
        assert ops.solve_calls <= problem.dim_z + 2

    def test_full_strategy_also_single_factorization(self, diag_small):
        problem = diag_small.problem
        p = diag_small.p0
        sol = solve_lower(problem, p, None, TIGHT)
        fb = first_bundle(problem, sol.z, p)
        sb = second_bundle(problem, sol.z, p)
        with count_ops() as ops:
            sens = ift_jacobian(fb)
            total_hessian(fb, sb, sens, strategy="full")
        assert ops.factorizations == 1
