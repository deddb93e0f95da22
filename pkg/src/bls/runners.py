"""Experiment runners behind the service endpoints.

Each runner is a pure function from validated options to serializable row
dicts, so the service, the CLI, and the test suite all drive the exact
same code.  Run seeds override the instance seed: a seed fully determines
the synthetic data and therefore the run.
"""

from __future__ import annotations

import dataclasses
from typing import Any

import numpy as np

from . import fdiff, ift
from .bounds import (
    estimate_constants,
    first_order_bound,
    optimize_epsilon,
    regularized_bound,
    second_order_bound,
)
from .errors import (
    BilevelError,
    DegeneratePathError,
    DimensionMismatchError,
    InfiniteBoundError,
)
from .problem import first_bundle, second_bundle
from .problems import ProblemInstance, build_instance
from .solvers import (
    LandscapeGrid,
    LowerConfig,
    OptimTrace,
    UpperConfig,
    optimize_upper,
    pca_landscape,
    solve_lower,
)

__all__ = ["instantiate", "run_tune", "run_gradcheck", "run_bounds", "run_landscape"]

_METHOD_ALIASES = {"gd": "gradient_descent", "gradient_descent": "gradient_descent", "newton": "newton"}

_FAILURE_STATUSES = {"lower_solve_failure", "line_search_failure"}


def instantiate(problem_spec: dict[str, Any], seed: int | None = None) -> ProblemInstance:
    """Build a registered instance from a spec dict, optionally reseeded."""
    spec = dict(problem_spec)
    name = spec.pop("name")
    if seed is not None:
        spec["seed"] = seed
    return build_instance(name, **spec)


def _rel_err(value: np.ndarray, reference: np.ndarray) -> float:
    num = float(np.linalg.norm(np.asarray(value) - np.asarray(reference)))
    den = float(np.linalg.norm(np.asarray(reference)))
    if den == 0.0:
        return 0.0 if num == 0.0 else num / 1e-12
    return num / den


def run_tune(
    problem_spec: dict[str, Any],
    method: str,
    seed: int,
    lower_cfg: LowerConfig,
    upper_cfg_base: UpperConfig,
) -> dict[str, Any]:
    """One optimization run; returns status, per-iteration rows, and a summary."""
    inst = instantiate(problem_spec, seed)
    upper_cfg = dataclasses.replace(upper_cfg_base, method=_METHOD_ALIASES[method])
    trace: OptimTrace = optimize_upper(
        inst.problem,
        inst.p0,
        lower_cfg=lower_cfg,
        upper_cfg=upper_cfg,
        z0=inst.z0,
        problem_name=inst.name,
        seed=seed,
    )
    status = "solver_failure" if trace.status in _FAILURE_STATUSES else "ok"
    return {"status": status, "rows": trace.to_rows(), "summary": trace.summary()}


def run_gradcheck(
    problem_spec: dict[str, Any],
    seed: int,
    lower_tol: float,
    expect_inexact: bool,
    tolerances: dict[str, float],
) -> dict[str, Any]:
    """Compare every implicit derivative against its finite-difference oracle.

    The evaluation point is solved to ``lower_tol``; the oracles always
    re-solve tightly, so loosening ``lower_tol`` surfaces the error growth
    of sensitivities at inexact solutions without failing the check when
    ``expect_inexact`` is set.
    """
    inst = instantiate(problem_spec, seed)
    problem, p = inst.problem, inst.p0
    tight = LowerConfig(tol=1e-12)
    point_cfg = LowerConfig(tol=lower_tol)
    sol = solve_lower(problem, p, inst.z0, point_cfg)

    def solve_tight(q: np.ndarray) -> np.ndarray:
        return solve_lower(problem, q, sol.z, tight).z

    fb = first_bundle(problem, sol.z, p)
    sb = second_bundle(problem, sol.z, p)
    sens = ift.ift_jacobian(fb)
    hess = ift.ift_hessian(fb, sb, sens)
    tgrad = ift.total_gradient(fb, sens)
    thess = ift.total_hessian(fb, sb, sens, mode="general", strategy="fast")

    jac_fd = fdiff.jacobian_fd(solve_tight, p)

    def jacobian_at(q: np.ndarray) -> np.ndarray:
        zq = solve_tight(q)
        return ift.ift_jacobian(first_bundle(problem, zq, q)).dp_z

    hess_fd = fdiff.stacked_derivative_fd(jacobian_at, p)
    tgrad_fd = fdiff.total_gradient_fd(problem, p, solve_tight)
    thess_fd = fdiff.total_hessian_fd(problem, p, solve_tight)

    errors = {
        "ift_jacobian_vs_fd": _rel_err(sens.dp_z, jac_fd),
        "ift_hessian_vs_fd_of_jacobian": _rel_err(hess.data, hess_fd.data),
        "total_gradient_vs_fd": _rel_err(tgrad, tgrad_fd),
        "total_hessian_vs_fd": _rel_err(thess, thess_fd),
    }
    rows = []
    all_within = True
    for quantity, err in errors.items():
        tol = tolerances[quantity]
        passed = err <= tol
        all_within = all_within and passed
        rows.append(
            {
                "quantity": quantity,
                "max_rel_error": err,
                "tolerance": tol,
                "passed": passed,
            }
        )
    return {
        "ok": all_within or expect_inexact,
        "all_within_tolerance": all_within,
        "lower_residual": sol.residual_norm,
        "rows": rows,
    }


def run_bounds(
    problem_spec: dict[str, Any],
    seed: int,
    deltas: list[float],
    trials: int,
    eps_max: float,
) -> dict[str, Any]:
    """Perturbation study: measured sensitivity errors against their bounds."""
    inst = instantiate(problem_spec, seed)
    problem, p = inst.problem, inst.p0
    tight = LowerConfig(tol=1e-12)
    z_star = solve_lower(problem, p, inst.z0, tight).z
    fb_star = first_bundle(problem, z_star, p)
    sb_star = second_bundle(problem, z_star, p)
    sens_star = ift.ift_jacobian(fb_star)
    hess_star = ift.ift_hessian(fb_star, sb_star, sens_star)

    rng = np.random.default_rng(seed)
    rows = []
    ok = True
    for delta in deltas:
        for trial in range(trials):
            u = rng.normal(size=problem.dim_z)
            u /= np.linalg.norm(u)
            z = z_star + delta * u
            fb = first_bundle(problem, z, p)
            sb = second_bundle(problem, z, p)
            sens = ift.ift_jacobian(fb)
            hess = ift.ift_hessian(fb, sb, sens)
            err_jac = float(np.linalg.norm(sens.dp_z - sens_star.dp_z, "fro"))
            err_hess = float(np.linalg.norm(hess.data - hess_star.data, "fro"))
            consts = estimate_constants(problem, z, z_star, p)
            try:
                b1 = first_order_bound(consts)
                b2 = second_order_bound(consts)
                b_reg0 = regularized_bound(dataclasses.replace(consts, epsilon=0.0))
                eps_star, b_star = optimize_epsilon(consts, eps_max)
            except InfiniteBoundError:
                b1 = b2 = b_reg0 = b_star = float("inf")
                eps_star = 0.0
            valid_first = err_jac <= b1
            valid_second = err_hess <= b2
            ok = ok and valid_first and valid_second
            rows.append(
                {
                    "delta": delta,
                    "trial": trial,
                    "err_jacobian": err_jac,
                    "bound_first": b1,
                    "err_hessian": err_hess,
                    "bound_second": b2,
                    "bound_reg_eps0": b_reg0,
                    "eps_star": eps_star,
                    "bound_reg_star": b_star,
                    "valid_first": valid_first,
                    "valid_second": valid_second,
                }
            )
    return {"ok": ok, "rows": rows}


def _grid_rows(grid: LandscapeGrid, dim_p: int) -> list[dict[str, Any]]:
    rows = []
    for i, u in enumerate(grid.u):
        for j, v in enumerate(grid.v):
            p = grid.center + u * grid.dir1 + v * grid.dir2
            row: dict[str, Any] = {"u": float(u), "v": float(v)}
            for k in range(dim_p):
                row[f"p_{k}"] = float(p[k])
            row["f_U"] = float(grid.loss[i, j])
            rows.append(row)
    return rows


def run_landscape(
    problem_spec: dict[str, Any],
    seed: int,
    method: str,
    grid_size: int,
    span: float,
    lower_cfg: LowerConfig,
    upper_cfg_base: UpperConfig,
) -> dict[str, Any]:
    """Optimize, project the path on its principal plane, and sample the loss.

    A degenerate (collinear or too-short) path still produces output: the
    second axis is an orthonormal completion and the status says so.
    """
    inst = instantiate(problem_spec, seed)
    upper_cfg = dataclasses.replace(upper_cfg_base, method=_METHOD_ALIASES[method])
    trace = optimize_upper(
        inst.problem,
        inst.p0,
        lower_cfg=lower_cfg,
        upper_cfg=upper_cfg,
        z0=inst.z0,
        problem_name=inst.name,
        seed=seed,
    )
    if trace.status in _FAILURE_STATUSES or not trace.rows:
        return {"status": "solver_failure", "degenerate": False, "grid_rows": [], "path_rows": []}
    try:
        grid = pca_landscape(trace, inst.problem, grid=(grid_size, grid_size), span=span, lower_cfg=lower_cfg)
    except (DegeneratePathError, DimensionMismatchError):
        # too few distinct points, or a single-parameter problem: fall back
        # to a flagged one-dimensional slice
        grid = _line_slice(trace, inst.problem, grid_size, span, lower_cfg)
    path_rows = []
    for row, u, v, loss in zip(trace.rows, grid.path_u, grid.path_v, grid.path_loss):
        path_rows.append(
            {
                "iteration": row.iteration,
                "u": float(u),
                "v": float(v),
                "f_U": float(loss),
                "f_U_trace": row.f_upper,
            }
        )
    status = "degenerate" if grid.degenerate else "ok"
    return {
        "status": status,
        "degenerate": grid.degenerate,
        "grid_rows": _grid_rows(grid, inst.problem.dim_p),
        "path_rows": path_rows,
    }


def _line_slice(
    trace: OptimTrace,
    problem,
    grid_size: int,
    span: float,
    lower_cfg: LowerConfig,
) -> LandscapeGrid:
    """One-dimensional fallback when the path has too few distinct points."""
    pts = np.array([row.p for row in trace.rows], dtype=np.float64)
    center = pts.mean(axis=0)
    diffs = pts - center
    norms = np.linalg.norm(diffs, axis=1)
    if norms.max() > 0:
        dir1 = diffs[int(np.argmax(norms))] / norms.max()
        ext = float(norms.max())
    else:
        dir1 = np.zeros(problem.dim_p)
        dir1[0] = 1.0
        ext = 1.0
    if problem.dim_p >= 2:
        e = np.zeros(problem.dim_p)
        e[int(np.argmin(np.abs(dir1)))] = 1.0
        dir2 = e - (e @ dir1) * dir1
        dir2 /= np.linalg.norm(dir2)
    else:
        dir2 = np.zeros(problem.dim_p)

    u_axis = np.linspace(-span * ext, span * ext, grid_size)
    z_warm = np.zeros(problem.dim_z)
    loss = np.zeros((grid_size, 1))
    for i, u in enumerate(u_axis):
        q = center + float(u) * dir1
        try:
            sol = solve_lower(problem, q, z_warm, lower_cfg)
        except BilevelError:
            loss[i, 0] = float("nan")
            continue
        z_warm = sol.z if sol.converged else z_warm
        loss[i, 0] = float(problem.upper(sol.z, q)) if sol.converged else float("nan")
    path_u = diffs @ dir1
    path_v = np.zeros_like(path_u)
    path_loss = np.array([row.f_upper for row in trace.rows])
    return LandscapeGrid(
        u=u_axis,
        v=np.zeros(1),
        loss=loss,
        path_u=path_u,
        path_v=path_v,
        path_loss=path_loss,
        center=center,
        dir1=dir1,
        dir2=dir2,
        degenerate=True,
    )
