"""Bilevel problem declaration and partial-derivative bundles.

A :class:`BilevelProblem` carries the upper objective ``f_U(z, p)`` and the
lower problem either as an objective ``f_L(z, p)`` or directly as the
stationarity map ``k(z, p)`` whose root defines ``z*(p)``.  When only the
objective is given, ``k`` is its gradient in ``z``, produced numerically.

Bundles collect every partial derivative the sensitivity formulas consume,
evaluated eagerly at one point.  Fields come from analytic evaluators when
supplied and from central finite differences otherwise; each field's
provenance is recorded for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import fdiff
from .errors import (
    DimensionMismatchError,
    EvaluatorFailure,
    InfeasibleEvaluation,
)
from .fdiff import DiffConfig
from .linalg import StackedMatrix, as_matrix, as_vector

__all__ = [
    "AnalyticPartials",
    "BilevelProblem",
    "FirstOrderBundle",
    "SecondOrderBundle",
    "LowerSolution",
    "residual",
    "residual_jacobian",
    "first_bundle",
    "second_bundle",
]

SYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class AnalyticPartials:
    """Optional closed-form partial evaluators, each ``(z, p) -> array``.

    Stacked fields (``hp_k``, ``dpz_k``, ``dzp_k``, ``hz_k``) may return
    either a :class:`StackedMatrix` or the equivalent stacked 2-D array.
    """

    dz_k: Callable | None = None
    dp_k: Callable | None = None
    dz_fu: Callable | None = None
    dp_fu: Callable | None = None
    hp_k: Callable | None = None
    dpz_k: Callable | None = None
    dzp_k: Callable | None = None
    hz_k: Callable | None = None
    hp_fu: Callable | None = None
    hz_fu: Callable | None = None
    dzp_fu: Callable | None = None


@dataclass(frozen=True)
class BilevelProblem:
    """Upper objective plus a lower problem given as objective or root map.

    Evaluators must be deterministic and reentrant.  ``fixed_point`` takes
    precedence for the stationarity map when both lower forms are present.
    """

    dim_z: int
    dim_p: int
    upper: Callable
    lower_objective: Callable | None = None
    fixed_point: Callable | None = None
    partials: AnalyticPartials = field(default_factory=AnalyticPartials)
    diff: DiffConfig = field(default_factory=DiffConfig)

    def __post_init__(self):
        if self.dim_z <= 0 or self.dim_p <= 0:
            raise DimensionMismatchError("dim_z and dim_p must be positive")
        if self.lower_objective is None and self.fixed_point is None:
            raise EvaluatorFailure("need lower_objective or fixed_point")


@dataclass(frozen=True)
class FirstOrderBundle:
    """First partials of the root map and the upper objective at one point."""

    dz_k: np.ndarray  # m x m
    dp_k: np.ndarray  # m x n
    dz_fu: np.ndarray  # 1 x m
    dp_fu: np.ndarray  # 1 x n
    provenance: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class SecondOrderBundle:
    """Stacked second partials of the root map plus upper-objective curvature.

    ``dzp_fu`` is the mixed partial of the upper objective; the assembly
    code decides whether to include its cross terms.
    """

    hp_k: StackedMatrix  # m blocks of n x n
    dpz_k: StackedMatrix  # m blocks of n x m
    dzp_k: StackedMatrix  # m blocks of m x n
    hz_k: StackedMatrix  # m blocks of m x m
    hp_fu: np.ndarray  # n x n
    hz_fu: np.ndarray  # m x m
    dzp_fu: np.ndarray  # m x n
    provenance: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class LowerSolution:
    """Result of a lower-level solve; ``converged`` implies the residual met tol."""

    z: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


def _call_user(fn: Callable, *args, name: str):
    try:
        return fn(*args)
    except InfeasibleEvaluation:
        raise
    except Exception as exc:  # noqa: BLE001 - user evaluator boundary
        raise EvaluatorFailure(f"{name} evaluator raised: {exc!r}") from exc


def residual(problem: BilevelProblem, z, p) -> np.ndarray:
    """Stationarity residual ``k(z, p)``.

    For objective-defined problems this is the gradient of the lower
    objective in ``z``, computed by central differences.
    """
    z = as_vector(z, problem.dim_z, name="z")
    p = as_vector(p, problem.dim_p, name="p")
    if problem.fixed_point is not None:
        out = _call_user(problem.fixed_point, z, p, name="fixed_point")
        return as_vector(out, problem.dim_z, name="k(z, p)")
    grad = fdiff.jacobian_fd(
        lambda v: _call_user(problem.lower_objective, v, p, name="lower_objective"),
        z,
        problem.diff,
    )
    return as_vector(grad.reshape(-1), problem.dim_z, name="k(z, p)")


def residual_jacobian(problem: BilevelProblem, z, p) -> np.ndarray:
    """``D_z k`` at ``(z, p)``: analytic if available, else finite differences.

    Objective-defined problems get the symmetric-stencil Hessian of the
    lower objective, which is symmetric by construction.
    """
    z = as_vector(z, problem.dim_z, name="z")
    p = as_vector(p, problem.dim_p, name="p")
    if problem.partials.dz_k is not None:
        out = _call_user(problem.partials.dz_k, z, p, name="dz_k")
        return as_matrix(out, problem.dim_z, problem.dim_z, name="dz_k")
    if problem.fixed_point is not None:
        out = fdiff.jacobian_fd(lambda v: residual(problem, v, p), z, problem.diff)
        return as_matrix(out, problem.dim_z, problem.dim_z, name="dz_k")
    out = fdiff.scalar_hessian_fd(
        lambda v: float(_call_user(problem.lower_objective, v, p, name="lower_objective")),
        z,
        problem.diff,
    )
    return as_matrix(out, problem.dim_z, problem.dim_z, name="dz_k")


def _check_symmetric(h: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.abs(h).max()) if h.size else 0.0)
    if float(np.abs(h - h.T).max()) > SYMMETRY_TOL * scale:
        raise EvaluatorFailure(f"{name} must be symmetric (it is a scalar Hessian)")


def first_bundle(problem: BilevelProblem, z, p) -> FirstOrderBundle:
    """All first partials of ``k`` and ``f_U`` at ``(z, p)``."""
    z = as_vector(z, problem.dim_z, name="z")
    p = as_vector(p, problem.dim_p, name="p")
    m, n = problem.dim_z, problem.dim_p
    prov: dict[str, str] = {}

    if problem.partials.dz_k is not None:
        dz_k = as_matrix(_call_user(problem.partials.dz_k, z, p, name="dz_k"), m, m, name="dz_k")
        prov["dz_k"] = "analytic"
    else:
        dz_k = residual_jacobian(problem, z, p)
        prov["dz_k"] = "fd"

    if problem.partials.dp_k is not None:
        dp_k = as_matrix(_call_user(problem.partials.dp_k, z, p, name="dp_k"), m, n, name="dp_k")
        prov["dp_k"] = "analytic"
    elif problem.fixed_point is not None:
        dp_k = as_matrix(
            fdiff.jacobian_fd(lambda q: residual(problem, z, q), p, problem.diff),
            m, n, name="dp_k",
        )
        prov["dp_k"] = "fd"
    else:
        dp_k = as_matrix(
            fdiff.mixed_scalar_fd(
                lambda zz, qq: float(_call_user(problem.lower_objective, zz, qq, name="lower_objective")),
                z, p, problem.diff,
            ),
            m, n, name="dp_k",
        )
        prov["dp_k"] = "fd"

    if problem.partials.dz_fu is not None:
        dz_fu = as_matrix(_call_user(problem.partials.dz_fu, z, p, name="dz_fu"), 1, m, name="dz_fu")
        prov["dz_fu"] = "analytic"
    else:
        dz_fu = as_matrix(
            fdiff.jacobian_fd(
                lambda v: np.array([float(_call_user(problem.upper, v, p, name="upper"))]),
                z, problem.diff,
            ),
            1, m, name="dz_fu",
        )
        prov["dz_fu"] = "fd"

    if problem.partials.dp_fu is not None:
        dp_fu = as_matrix(_call_user(problem.partials.dp_fu, z, p, name="dp_fu"), 1, n, name="dp_fu")
        prov["dp_fu"] = "analytic"
    else:
        dp_fu = as_matrix(
            fdiff.jacobian_fd(
                lambda q: np.array([float(_call_user(problem.upper, z, q, name="upper"))]),
                p, problem.diff,
            ),
            1, n, name="dp_fu",
        )
        prov["dp_fu"] = "fd"

    return FirstOrderBundle(dz_k=dz_k, dp_k=dp_k, dz_fu=dz_fu, dp_fu=dp_fu, provenance=prov)


def _as_stacked(value, blocks: int, rows: int, cols: int, name: str) -> StackedMatrix:
    if isinstance(value, StackedMatrix):
        if (value.blocks, value.block_rows, value.block_cols) != (blocks, rows, cols):
            raise DimensionMismatchError(
                f"{name} must be {blocks} blocks of {rows}x{cols}, got "
                f"{value.blocks} blocks of {value.block_rows}x{value.block_cols}"
            )
        return value
    return StackedMatrix(blocks, rows, cols, np.asarray(value, dtype=np.float64))


def second_bundle(problem: BilevelProblem, z, p) -> SecondOrderBundle:
    """All stacked second partials of ``k`` plus the upper-objective curvature."""
    z = as_vector(z, problem.dim_z, name="z")
    p = as_vector(p, problem.dim_p, name="p")
    m, n = problem.dim_z, problem.dim_p
    prov: dict[str, str] = {}
    k_fn = lambda zz, qq: residual(problem, zz, qq)  # noqa: E731

    def stacked_field(attr: str, which: str, blocks: int, rows: int, cols: int) -> StackedMatrix:
        analytic = getattr(problem.partials, attr)
        if analytic is not None:
            prov[attr] = "analytic"
            return _as_stacked(_call_user(analytic, z, p, name=attr), blocks, rows, cols, attr)
        prov[attr] = "fd"
        got = fdiff.stacked_second_fd(k_fn, z, p, which, problem.diff)
        return _as_stacked(got, blocks, rows, cols, attr)

    hp_k = stacked_field("hp_k", "yy", m, n, n)
    dpz_k = stacked_field("dpz_k", "yx", m, n, m)
    dzp_k = stacked_field("dzp_k", "xy", m, m, n)
    hz_k = stacked_field("hz_k", "xx", m, m, m)

    upper_scalar = lambda zz, qq: float(_call_user(problem.upper, zz, qq, name="upper"))  # noqa: E731

    if problem.partials.hp_fu is not None:
        hp_fu = as_matrix(_call_user(problem.partials.hp_fu, z, p, name="hp_fu"), n, n, name="hp_fu")
        prov["hp_fu"] = "analytic"
    else:
        hp_fu = fdiff.scalar_hessian_fd(lambda q: upper_scalar(z, q), p, problem.diff)
        prov["hp_fu"] = "fd"
    _check_symmetric(hp_fu, "hp_fu")

    if problem.partials.hz_fu is not None:
        hz_fu = as_matrix(_call_user(problem.partials.hz_fu, z, p, name="hz_fu"), m, m, name="hz_fu")
        prov["hz_fu"] = "analytic"
    else:
        hz_fu = fdiff.scalar_hessian_fd(lambda v: upper_scalar(v, p), z, problem.diff)
        prov["hz_fu"] = "fd"
    _check_symmetric(hz_fu, "hz_fu")

    if problem.partials.dzp_fu is not None:
        dzp_fu = as_matrix(_call_user(problem.partials.dzp_fu, z, p, name="dzp_fu"), m, n, name="dzp_fu")
        prov["dzp_fu"] = "analytic"
    else:
        dzp_fu = as_matrix(
            fdiff.mixed_scalar_fd(upper_scalar, z, p, problem.diff), m, n, name="dzp_fu"
        )
        prov["dzp_fu"] = "fd"

    return SecondOrderBundle(
        hp_k=hp_k,
        dpz_k=dpz_k,
        dzp_k=dzp_k,
        hz_k=hz_k,
        hp_fu=as_matrix(hp_fu, n, n, name="hp_fu"),
        hz_fu=as_matrix(hz_fu, m, m, name="hz_fu"),
        dzp_fu=dzp_fu,
        provenance=prov,
    )
