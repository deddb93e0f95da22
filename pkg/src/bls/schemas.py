"""Pydantic request/response models for the service and the CLI config file.

Everything is strict (``extra="forbid"``): unknown keys anywhere in a
config or request are rejected with the offending key named, which is what
lets machine-generated configs fail loudly instead of silently drifting.
"""

from __future__ import annotations

from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field

from .solvers import LowerConfig, UpperConfig

__all__ = [
    "StrictModel",
    "ProblemSpecT",
    "LowerOptions",
    "UpperOptions",
    "GradTolerances",
    "GradcheckOptions",
    "BoundsOptions",
    "LandscapeOptions",
    "RunConfig",
    "TuneRequest",
    "TuneResponse",
    "GradcheckRequest",
    "GradcheckResponse",
    "BoundsRequest",
    "BoundsResponse",
    "LandscapeRequest",
    "LandscapeResponse",
    "problem_spec_dict",
    "build_lower_config",
    "build_upper_config",
]

MethodT = Literal["gd", "gradient_descent", "newton"]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class QuadraticToySpec(StrictModel):
    name: Literal["quadratic_toy"]
    m: int = Field(default=4, ge=1)
    n: int = Field(default=4, ge=1)
    seed: int = 0


class ScalarCosSpec(StrictModel):
    name: Literal["scalar_cos"]
    p0: float = 0.8
    seed: int = 0


class RidgeSpec(StrictModel):
    name: Literal["ridge"]
    features: int = Field(default=20, ge=1)
    samples: int = Field(default=100, ge=2)
    seed: int = 0
    noise: float = Field(default=0.1, ge=0)
    p0: float = 0.0
    upper_loss: Literal["squared", "cross_entropy"] = "squared"
    classes: int = Field(default=3, ge=2)


class DiagRidgeSpec(StrictModel):
    name: Literal["diag_ridge"]
    features: int = Field(default=10, ge=1)
    samples: int = Field(default=80, ge=2)
    seed: int = 0
    noise: float = Field(default=0.1, ge=0)
    p0: float = 0.0


class InverseLqrSpec(StrictModel):
    name: Literal["inverse_lqr"]
    state_dim: int = Field(default=2, ge=1)
    control_dim: int = Field(default=1, ge=1)
    horizon: int = Field(default=10, ge=1)
    u_lim: float | None = Field(default=None, gt=0)
    barrier_alpha: float | None = Field(default=None, gt=0)
    seed: int = 0
    dt: float = Field(default=0.1, gt=0)
    state_weight: float = Field(default=1.0, gt=0)
    control_weight: float = Field(default=0.1, gt=0)


ProblemSpecT = Annotated[
    Union[QuadraticToySpec, ScalarCosSpec, RidgeSpec, DiagRidgeSpec, InverseLqrSpec],
    Field(discriminator="name"),
]

PROBLEM_SPEC_MODELS = (
    QuadraticToySpec,
    ScalarCosSpec,
    RidgeSpec,
    DiagRidgeSpec,
    InverseLqrSpec,
)


def problem_spec_dict(spec) -> dict:
    """Plain dict of constructor arguments for :func:`bls.problems.build_instance`."""
    return spec.model_dump()


class LowerOptions(StrictModel):
    tol: float = Field(default=1e-10, gt=0)
    max_iter: int = Field(default=200, ge=1)


class UpperOptions(StrictModel):
    step: float = Field(default=1e-2, gt=0)
    max_iter: int = Field(default=100, ge=1)
    grad_tol: float = Field(default=1e-7, gt=0)
    f_tol: float = Field(default=1e-12, gt=0)
    lambda0: float = Field(default=1e-6, gt=0)
    armijo: float = Field(default=1e-4, gt=0)
    hessian_mode: Literal["general", "paper_exact"] = "general"


def build_lower_config(opts: LowerOptions) -> LowerConfig:
    return LowerConfig(tol=opts.tol, max_iter=opts.max_iter)


def build_upper_config(opts: UpperOptions, method: str = "newton") -> UpperConfig:
    return UpperConfig(
        method="newton" if method == "newton" else "gradient_descent",
        step=opts.step,
        max_iter=opts.max_iter,
        grad_tol=opts.grad_tol,
        f_tol=opts.f_tol,
        lambda0=opts.lambda0,
        armijo=opts.armijo,
        hessian_mode=opts.hessian_mode,
    )


class GradTolerances(StrictModel):
    ift_jacobian_vs_fd: float = Field(default=1e-5, gt=0)
    ift_hessian_vs_fd_of_jacobian: float = Field(default=1e-4, gt=0)
    total_gradient_vs_fd: float = Field(default=1e-5, gt=0)
    total_hessian_vs_fd: float = Field(default=1e-4, gt=0)


class GradcheckOptions(StrictModel):
    lower_tol: float = Field(default=1e-12, gt=0)
    expect_inexact: bool = False
    tolerances: GradTolerances = GradTolerances()


class BoundsOptions(StrictModel):
    deltas: list[float] = Field(default=[1e-2, 1e-3, 1e-4])
    trials: int = Field(default=20, ge=1)
    eps_max: float = Field(default=1.0, gt=0)


class LandscapeOptions(StrictModel):
    method: MethodT = "newton"
    grid: int = Field(default=25, ge=2)
    span: float = Field(default=1.2, gt=0)


class RunConfig(StrictModel):
    """The single JSON config document consumed by every CLI command."""

    problem: ProblemSpecT
    seeds: list[int] = Field(default=[0], min_length=1)
    methods: list[MethodT] = Field(default=["newton"], min_length=1)
    lower: LowerOptions = LowerOptions()
    upper: UpperOptions = UpperOptions()
    out_dir: str | None = None
    format: Literal["csv", "json"] = "csv"
    gradcheck: GradcheckOptions = GradcheckOptions()
    bounds: BoundsOptions = BoundsOptions()
    landscape: LandscapeOptions = LandscapeOptions()


# --------------------------------------------------------------------------
# Service wire models
# --------------------------------------------------------------------------


class TuneRequest(StrictModel):
    problem: ProblemSpecT
    method: MethodT = "newton"
    seed: int = 0
    lower: LowerOptions = LowerOptions()
    upper: UpperOptions = UpperOptions()


class TraceRowModel(StrictModel):
    model_config = ConfigDict(extra="allow")  # p_0..p_{n-1} columns vary by problem

    iteration: int
    lower_solve_count: int
    cumulative_lower_solves: int
    f_U: float
    grad_norm: float
    wall_ms: float


class RunSummaryModel(StrictModel):
    problem: str
    method: str
    seed: int | None
    status: str
    iterations: int
    cumulative_lower_solves: int
    final_f_U: float
    final_grad_norm: float
    line_search_failures: int


class TuneResponse(StrictModel):
    status: Literal["ok", "solver_failure"]
    rows: list[TraceRowModel]
    summary: RunSummaryModel


class GradcheckRequest(StrictModel):
    problem: ProblemSpecT
    seed: int = 0
    options: GradcheckOptions = GradcheckOptions()


class CheckRowModel(StrictModel):
    quantity: str
    max_rel_error: float
    tolerance: float
    passed: bool


class GradcheckResponse(StrictModel):
    ok: bool
    all_within_tolerance: bool
    lower_residual: float
    rows: list[CheckRowModel]


class BoundsRequest(StrictModel):
    problem: ProblemSpecT
    seed: int = 0
    options: BoundsOptions = BoundsOptions()


class BoundsRowModel(StrictModel):
    delta: float
    trial: int
    err_jacobian: float
    bound_first: float
    err_hessian: float
    bound_second: float
    bound_reg_eps0: float
    eps_star: float
    bound_reg_star: float
    valid_first: bool
    valid_second: bool


class BoundsResponse(StrictModel):
    ok: bool
    rows: list[BoundsRowModel]


class LandscapeRequest(StrictModel):
    problem: ProblemSpecT
    seed: int = 0
    method: MethodT = "newton"
    grid: int = Field(default=25, ge=2)
    span: float = Field(default=1.2, gt=0)
    lower: LowerOptions = LowerOptions()
    upper: UpperOptions = UpperOptions()


class GridRowModel(StrictModel):
    model_config = ConfigDict(extra="allow")  # p_0..p_{n-1}

    u: float
    v: float
    f_U: float


class PathRowModel(StrictModel):
    iteration: int
    u: float
    v: float
    f_U: float
    f_U_trace: float


class LandscapeResponse(StrictModel):
    status: Literal["ok", "degenerate", "solver_failure"]
    degenerate: bool
    grid_rows: list[GridRowModel]
    path_rows: list[PathRowModel]
