"""Lower-level Newton solver, log-barrier reformulation, and upper-level
optimizers (gradient-descent baseline and damped Newton driven by the
implicit Hessian), plus the principal-plane landscape projection.

The cost unit throughout is the number of lower-level solves; every trace
records it per iteration because that is the quantity the second-order
method is designed to reduce.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ift
from .errors import (
    DegeneratePathError,
    DimensionMismatchError,
    InfeasibleEvaluation,
    NumericDiffFailure,
    SingularSystemError,
)
from .linalg import factorize
from .problem import (
    BilevelProblem,
    LowerSolution,
    first_bundle,
    residual,
    residual_jacobian,
    second_bundle,
)

__all__ = [
    "LowerConfig",
    "BarrierSpec",
    "UpperConfig",
    "TraceRow",
    "OptimTrace",
    "solve_lower",
    "apply_barrier",
    "optimize_upper",
    "LandscapeGrid",
    "pca_landscape",
]


@dataclass(frozen=True)
class LowerConfig:
    """Newton settings for the lower-level root solve."""

    tol: float = 1e-10
    max_iter: int = 200
    backtrack_factor: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class BarrierSpec:
    """Inequality constraints ``c_i(z) <= 0`` smoothed by a log barrier.

    The penalty per constraint is ``-log(-alpha * c) / alpha``; larger
    ``alpha`` hugs the hard constraint more closely while every derivative
    stays defined on the feasible interior.
    """

    constraints: Sequence[Callable]
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class UpperConfig:
    """Upper-level optimizer settings.

    ``method`` is ``"newton"`` (damped by a Levenberg schedule, Armijo line
    search) or ``"gradient_descent"`` (fixed step with halving on
    increase).
    """

    method: str = "newton"
    step: float = 1e-2
    lambda0: float = 1e-6
    lambda_up: float = 10.0
    lambda_down: float = 3.0
    armijo: float = 1e-4
    max_iter: int = 100
    max_backtracks: int = 40
    gd_max_halvings: int = 10
    grad_tol: float = 1e-7
    f_tol: float = 1e-12
    hessian_mode: str = "general"
    hessian_strategy: str = "fast"

    def __post_init__(self):
        if self.method not in ("newton", "gradient_descent"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.step <= 0 or self.grad_tol <= 0:
            raise ValueError("step and grad_tol must be positive")


def _merit(problem: BilevelProblem, z: np.ndarray, p: np.ndarray):
    """Squared residual norm, +inf outside the barrier interior.

    Numeric-differentiation failures count as infeasible: the sentinel
    ``+inf`` objective of a barrier makes stencils non-finite there.
    """
    try:
        k = residual(problem, z, p)
    except (InfeasibleEvaluation, NumericDiffFailure):
        return np.inf, None
    if not np.all(np.isfinite(k)):
        return np.inf, None
    return float(k @ k), k


def solve_lower(
    problem: BilevelProblem,
    p,
    z0=None,
    cfg: LowerConfig = LowerConfig(),
) -> LowerSolution:
    """Newton iteration on ``k(z, p) = 0`` with backtracking on ``|k|^2``.

    A singular Jacobian mid-iteration is retried with an added ridge
    ``1e-8 * |D_z k|_F``, escalating tenfold a few times before giving up.
    Non-convergence is reported through the ``converged`` flag.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    z = (
        np.zeros(problem.dim_z)
        if z0 is None
        else np.array(z0, dtype=np.float64).reshape(-1).copy()
    )
    if z.size != problem.dim_z:
        raise DimensionMismatchError(f"z0 must have length {problem.dim_z}")
    merit, k = _merit(problem, z, p)
    if k is None:
        raise InfeasibleEvaluation("starting point is outside the feasible interior")
    for it in range(cfg.max_iter):
        norm_k = float(np.sqrt(merit))
        if norm_k <= cfg.tol:
            return LowerSolution(z=z, residual_norm=norm_k, iterations=it, converged=True)
        jac = residual_jacobian(problem, z, p)
        fact = factorize(jac)
        if fact.singular:
            ridge = 1e-8 * float(np.linalg.norm(jac, "fro"))
            ridge = max(ridge, 1e-300)
            for _ in range(6):
                fact = factorize(jac + ridge * np.eye(problem.dim_z))
                if not fact.singular:
                    break
                ridge *= 10.0
            else:
                raise SingularSystemError(
                    "lower-level Jacobian is singular even after ridge escalation"
                )
        d = -fact.solve(k)
        slope = float(2.0 * (k @ (jac @ d)))  # directional derivative of |k|^2
        t = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            merit_try, k_try = _merit(problem, z + t * d, p)
            if k_try is not None and merit_try <= merit + cfg.armijo * t * slope:
                z = z + t * d
                merit, k = merit_try, k_try
                accepted = True
                break
            t *= cfg.backtrack_factor
        if not accepted:
            return LowerSolution(
                z=z, residual_norm=norm_k, iterations=it + 1, converged=False
            )
    norm_k = float(np.sqrt(merit))
    return LowerSolution(
        z=z, residual_norm=norm_k, iterations=cfg.max_iter, converged=norm_k <= cfg.tol
    )


def apply_barrier(lower_objective: Callable, spec: BarrierSpec) -> Callable:
    """Wrap a lower objective with smooth log-barrier penalties.

    The returned evaluator equals the original objective plus
    ``sum_i -log(-alpha * c_i(z)) / alpha`` on the feasible interior and a
    ``+inf`` sentinel outside it, so line searches reject infeasible steps.
    """
    constraints = tuple(spec.constraints)
    alpha = float(spec.alpha)

    def barrier_objective(z, p):
        value = float(lower_objective(z, p))
        for c in constraints:
            slack = float(c(np.asarray(z, dtype=np.float64).reshape(-1)))
            if slack >= 0.0:
                return np.inf
            value -= np.log(-alpha * slack) / alpha
        return value

    return barrier_objective


@dataclass(frozen=True)
class TraceRow:
    """One visited upper-level iterate.

    ``lower_solves`` counts the solves consumed to reach this iterate from
    the previous one (line-search trials included); ``descent`` is the
    directional derivative of the accepted step into this iterate.
    """

    iteration: int
    lower_solves: int
    cumulative_lower_solves: int
    f_upper: float
    grad_norm: float
    wall_ms: float
    p: tuple[float, ...]
    descent: float | None = None


@dataclass
class OptimTrace:
    """Full record of one upper-level optimization run."""

    problem_name: str
    method: str
    seed: int | None
    rows: list[TraceRow] = field(default_factory=list)
    status: str = "incomplete"
    line_search_failures: int = 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def total_lower_solves(self) -> int:
        return self.rows[-1].cumulative_lower_solves if self.rows else 0

    @property
    def final_p(self) -> np.ndarray:
        if not self.rows:
            raise ValueError("trace is empty")
        return np.asarray(self.rows[-1].p)

    @property
    def final_f(self) -> float:
        if not self.rows:
            raise ValueError("trace is empty")
        return self.rows[-1].f_upper

    def to_rows(self) -> list[dict]:
        """Flatten into serializable row dicts (p expanded per coordinate)."""
        out = []
        for row in self.rows:
            rec: dict = {
                "iteration": row.iteration,
                "lower_solve_count": row.lower_solves,
                "cumulative_lower_solves": row.cumulative_lower_solves,
                "f_U": row.f_upper,
                "grad_norm": row.grad_norm,
                "wall_ms": row.wall_ms,
            }
            for i, val in enumerate(row.p):
                rec[f"p_{i}"] = val
            out.append(rec)
        return out

    def summary(self) -> dict:
        return {
            "problem": self.problem_name,
            "method": self.method,
            "seed": self.seed,
            "status": self.status,
            "iterations": max(len(self.rows) - 1, 0),
            "cumulative_lower_solves": self.total_lower_solves,
            "final_f_U": self.final_f if self.rows else float("nan"),
            "final_grad_norm": self.rows[-1].grad_norm if self.rows else float("nan"),
            "line_search_failures": self.line_search_failures,
        }


def optimize_upper(
    problem: BilevelProblem,
    p0,
    lower_cfg: LowerConfig = LowerConfig(),
    upper_cfg: UpperConfig = UpperConfig(),
    z0=None,
    problem_name: str = "",
    seed: int | None = None,
) -> OptimTrace:
    """Run the upper-level optimizer, warm-starting every lower solve.

    Lower-solve or line-search failures terminate with the partial trace
    and a matching ``status``; convergence means the total-gradient norm
    fell below ``grad_tol`` or the objective decrease below ``f_tol``.
    """
    p = np.asarray(p0, dtype=np.float64).reshape(-1).copy()
    if p.size != problem.dim_p:
        raise DimensionMismatchError(f"p0 must have length {problem.dim_p}")
    trace = OptimTrace(problem_name=problem_name, method=upper_cfg.method, seed=seed)
    solves = 0
    z_warm = np.zeros(problem.dim_z) if z0 is None else np.asarray(z0, dtype=np.float64)

    def solve_at(q: np.ndarray) -> LowerSolution | None:
        """One counted lower solve; raised solver errors count as failures."""
        nonlocal solves
        solves += 1
        try:
            sol = solve_lower(problem, q, z_warm, lower_cfg)
        except (InfeasibleEvaluation, NumericDiffFailure, SingularSystemError):
            return None
        return sol if sol.converged else None

    t_prev = time.perf_counter()
    sol = solve_at(p)
    if sol is None:
        trace.status = "lower_solve_failure"
        return trace
    z = sol.z
    z_warm = z
    f = float(problem.upper(z, p))
    f_prev = np.inf
    lam = upper_cfg.lambda0
    prev_solves = 0
    pending_descent: float | None = None

    for it in range(upper_cfg.max_iter + 1):
        fb = first_bundle(problem, z, p)
        sens = ift.ift_jacobian(fb)
        g = ift.total_gradient(fb, sens).reshape(-1)
        gnorm = float(np.linalg.norm(g))
        now = time.perf_counter()
        trace.rows.append(
            TraceRow(
                iteration=it,
                lower_solves=solves - prev_solves,
                cumulative_lower_solves=solves,
                f_upper=f,
                grad_norm=gnorm,
                wall_ms=(now - t_prev) * 1e3,
                p=tuple(float(x) for x in p),
                descent=pending_descent,
            )
        )
        prev_solves = solves
        t_prev = now
        pending_descent = None
        if gnorm <= upper_cfg.grad_tol:
            trace.status = "converged"
            return trace
        if it == upper_cfg.max_iter:
            trace.status = "max_iterations"
            return trace

        if upper_cfg.method == "newton":
            sb = second_bundle(problem, z, p)
            hess = ift.total_hessian(
                fb, sb, sens, mode=upper_cfg.hessian_mode, strategy=upper_cfg.hessian_strategy
            )
            d = None
            slope = 0.0
            for _ in range(40):
                fact = factorize(hess + lam * np.eye(p.size))
                if not fact.singular:
                    cand = -fact.solve(g)
                    slope = float(g @ cand)
                    if np.all(np.isfinite(cand)) and slope < 0.0:
                        d = cand
                        break
                lam *= upper_cfg.lambda_up
            if d is None:
                trace.line_search_failures += 1
                trace.status = "line_search_failure"
                return trace
            t = 1.0
            accepted = False
            for _ in range(upper_cfg.max_backtracks):
                p_try = p + t * d
                sol_try = solve_at(p_try)
                if sol_try is not None:
                    f_try = float(problem.upper(sol_try.z, p_try))
                    if f_try <= f + upper_cfg.armijo * t * slope:
                        f_prev = f
                        p, z, f = p_try, sol_try.z, f_try
                        z_warm = z
                        lam = max(lam / upper_cfg.lambda_down, 1e-12)
                        pending_descent = slope
                        accepted = True
                        break
                t *= 0.5
            if not accepted:
                trace.line_search_failures += 1
                trace.status = "line_search_failure"
                return trace
        else:  # gradient descent baseline
            d = -g
            slope = float(g @ d)
            s = upper_cfg.step
            accepted = False
            for _ in range(upper_cfg.gd_max_halvings + 1):
                p_try = p + s * d
                sol_try = solve_at(p_try)
                if sol_try is not None:
                    f_try = float(problem.upper(sol_try.z, p_try))
                    if f_try < f:
                        f_prev = f
                        p, z, f = p_try, sol_try.z, f_try
                        z_warm = z
                        pending_descent = slope
                        accepted = True
                        break
                s *= 0.5
            if not accepted:
                trace.line_search_failures += 1
                trace.status = "line_search_failure"
                return trace

        if f_prev - f < upper_cfg.f_tol:
            fb = first_bundle(problem, z, p)
            sens = ift.ift_jacobian(fb)
            gnorm = float(np.linalg.norm(ift.total_gradient(fb, sens)))
            now = time.perf_counter()
            trace.rows.append(
                TraceRow(
                    iteration=it + 1,
                    lower_solves=solves - prev_solves,
                    cumulative_lower_solves=solves,
                    f_upper=f,
                    grad_norm=gnorm,
                    wall_ms=(now - t_prev) * 1e3,
                    p=tuple(float(x) for x in p),
                    descent=pending_descent,
                )
            )
            trace.status = "converged"
            return trace

    trace.status = "max_iterations"
    return trace


def _power_direction(s: np.ndarray, tol: float = 1e-12, max_iter: int = 1000):
    """Dominant eigenpair of a symmetric PSD matrix by power iteration."""
    n = s.shape[0]
    x = 1.0 + 1e-3 * np.arange(n)
    x /= np.linalg.norm(x)
    lam_prev = np.inf
    lam = 0.0
    for _ in range(max_iter):
        y = s @ x
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return x, 0.0
        x = y / ny
        lam = float(x @ (s @ x))
        if abs(lam - lam_prev) <= tol * max(abs(lam), 1e-300):
            break
        lam_prev = lam
    return x, lam


@dataclass(frozen=True)
class LandscapeGrid:
    """Upper-loss samples on the principal plane of an optimization path.

    ``loss[i, j]`` is the upper loss at
    ``center + u[i] * dir1 + v[j] * dir2``; path arrays hold the projected
    trace points and the loss re-evaluated at their in-plane
    reconstructions.
    """

    u: np.ndarray
    v: np.ndarray
    loss: np.ndarray
    path_u: np.ndarray
    path_v: np.ndarray
    path_loss: np.ndarray
    center: np.ndarray
    dir1: np.ndarray
    dir2: np.ndarray
    degenerate: bool


def pca_landscape(
    trace: OptimTrace,
    problem: BilevelProblem,
    grid: tuple[int, int] | int = (25, 25),
    span: float = 1.2,
    lower_cfg: LowerConfig = LowerConfig(),
) -> LandscapeGrid:
    """Project the path onto its top-2 principal directions and sample the loss.

    Directions come from power iteration with deflation on the centered
    path covariance.  A collinear path gets an arbitrary orthonormal
    completion for the second axis and is flagged ``degenerate``.  Grid
    half-width per axis is ``span`` times the path extent along that axis.
    """
    if problem.dim_p < 2:
        raise DimensionMismatchError("landscape projection needs dim_p >= 2")
    pts = np.array([row.p for row in trace.rows], dtype=np.float64)
    if pts.shape[0] == 0 or np.unique(pts, axis=0).shape[0] < 3:
        raise DegeneratePathError("need at least 3 distinct path points")
    if isinstance(grid, int):
        grid = (grid, grid)

    center = pts.mean(axis=0)
    centered = pts - center
    cov = centered.T @ centered
    dir1, lam1 = _power_direction(cov)
    deflated = cov - lam1 * np.outer(dir1, dir1)
    dir2, lam2 = _power_direction(deflated)
    dir2 = dir2 - (dir2 @ dir1) * dir1
    nrm = float(np.linalg.norm(dir2))
    degenerate = lam2 <= 1e-12 * max(lam1, 1e-300) or nrm < 1e-8
    if degenerate:
        basis_scores = np.abs(np.eye(problem.dim_p) @ dir1)
        e = np.zeros(problem.dim_p)
        e[int(np.argmin(basis_scores))] = 1.0
        dir2 = e - (e @ dir1) * dir1
        dir2 /= np.linalg.norm(dir2)
    else:
        dir2 = dir2 / nrm

    path_u = centered @ dir1
    path_v = centered @ dir2
    ext1 = float(np.abs(path_u).max())
    ext2 = float(np.abs(path_v).max())
    if ext1 == 0.0:
        ext1 = 1.0
    if ext2 == 0.0:
        ext2 = ext1
    u_axis = np.linspace(-span * ext1, span * ext1, grid[0])
    v_axis = np.linspace(-span * ext2, span * ext2, grid[1])

    z_warm = np.zeros(problem.dim_z)

    def loss_at(u: float, v: float) -> float:
        nonlocal z_warm
        q = center + u * dir1 + v * dir2
        try:
            sol = solve_lower(problem, q, z_warm, lower_cfg)
        except (InfeasibleEvaluation, NumericDiffFailure, SingularSystemError):
            return float("nan")
        if not sol.converged:
            return float("nan")
        z_warm = sol.z
        return float(problem.upper(sol.z, q))

    loss = np.zeros((grid[0], grid[1]))
    for i, u in enumerate(u_axis):
        for j, v in enumerate(v_axis):
            loss[i, j] = loss_at(float(u), float(v))

    z_warm = np.zeros(problem.dim_z)
    path_loss = np.array([loss_at(float(u), float(v)) for u, v in zip(path_u, path_v)])

    return LandscapeGrid(
        u=u_axis,
        v=v_axis,
        loss=loss,
        path_u=path_u,
        path_v=path_v,
        path_loss=path_loss,
        center=center,
        dir1=dir1,
        dir2=dir2,
        degenerate=degenerate,
    )
