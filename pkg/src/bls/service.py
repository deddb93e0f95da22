"""FastAPI service exposing the experiment runners.

Run it with ``bls serve`` or ``uvicorn bls.service:app``.  Numeric failures
that are part of normal operation (solver failures, degenerate paths) are
reported inside the response body; HTTP errors are reserved for invalid
requests.
"""

from __future__ import annotations

from fastapi import FastAPI

from . import __version__, runners
from .schemas import (
    BoundsRequest,
    BoundsResponse,
    GradcheckRequest,
    GradcheckResponse,
    LandscapeRequest,
    LandscapeResponse,
    PROBLEM_SPEC_MODELS,
    TuneRequest,
    TuneResponse,
    build_lower_config,
    build_upper_config,
    problem_spec_dict,
)

__all__ = ["create_app", "app"]


def create_app() -> FastAPI:
    app = FastAPI(
        title="bilevel-sens",
        version=__version__,
        description=(
            "Second-order sensitivity analysis for bilevel programs: tuning "
            "runs, derivative checks, error-bound studies, and loss-landscape "
            "grids over the built-in problem instances."
        ),
    )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.get("/problems")
    def problems() -> list[dict]:
        out = []
        for model in PROBLEM_SPEC_MODELS:
            schema = model.model_json_schema()
            name = schema["properties"]["name"]["const"]
            params = {
                key: val.get("default")
                for key, val in schema["properties"].items()
                if key != "name"
            }
            out.append({"name": name, "defaults": params})
        return out

    @app.post("/tune", response_model=TuneResponse)
    def tune(req: TuneRequest) -> TuneResponse:
        result = runners.run_tune(
            problem_spec_dict(req.problem),
            method=req.method,
            seed=req.seed,
            lower_cfg=build_lower_config(req.lower),
            upper_cfg_base=build_upper_config(req.upper, req.method),
        )
        return TuneResponse(**result)

    @app.post("/gradcheck", response_model=GradcheckResponse)
    def gradcheck(req: GradcheckRequest) -> GradcheckResponse:
        result = runners.run_gradcheck(
            problem_spec_dict(req.problem),
            seed=req.seed,
            lower_tol=req.options.lower_tol,
            expect_inexact=req.options.expect_inexact,
            tolerances=req.options.tolerances.model_dump(),
        )
        return GradcheckResponse(**result)

    @app.post("/bounds", response_model=BoundsResponse)
    def bounds(req: BoundsRequest) -> BoundsResponse:
        result = runners.run_bounds(
            problem_spec_dict(req.problem),
            seed=req.seed,
            deltas=req.options.deltas,
            trials=req.options.trials,
            eps_max=req.options.eps_max,
        )
        return BoundsResponse(**result)

    @app.post("/landscape", response_model=LandscapeResponse)
    def landscape(req: LandscapeRequest) -> LandscapeResponse:
        result = runners.run_landscape(
            problem_spec_dict(req.problem),
            seed=req.seed,
            method=req.method,
            grid_size=req.grid,
            span=req.span,
            lower_cfg=build_lower_config(req.lower),
            upper_cfg_base=build_upper_config(req.upper, req.method),
        )
        return LandscapeResponse(**result)

    return app


app = create_app()
