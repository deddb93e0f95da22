"""Thin-client command line for the bilevel-sens service.

Every compute command validates a strict JSON config, posts requests to
the service (an in-process instance by default, or ``--server URL``), and
writes the returned rows as CSV/JSON files.

Exit codes: 0 ok, 1 config error, 2 solver failure (partial outputs are
still written), 3 verification failure.
"""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path

import click
import httpx
from pydantic import ValidationError

from .schemas import RunConfig
from .tabular import write_rows

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_VERIFY = 3


class ConfigRejected(Exception):
    pass


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        _fail(EXIT_CONFIG, f"cannot read config {path}: {exc}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        _fail(EXIT_CONFIG, f"invalid JSON in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(part) for part in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        _fail(EXIT_CONFIG, f"invalid config {path}: " + "; ".join(lines))
    raise AssertionError("unreachable")


def _format_422(detail) -> str:
    if isinstance(detail, dict):
        detail = detail.get("detail", detail)
    if isinstance(detail, list):
        parts = []
        for err in detail:
            loc = ".".join(str(p) for p in err.get("loc", []) if p != "body")
            parts.append(f"{loc}: {err.get('msg', 'invalid')}")
        return "; ".join(parts)
    return str(detail)


def _post_all(server: str | None, requests: list[tuple[str, dict]], jobs: int) -> list[dict]:
    """POST the requests (in order) with at most ``jobs`` in flight."""

    async def go() -> list[dict]:
        if server is None:
            from .service import create_app

            transport = httpx.ASGITransport(app=create_app())
            client = httpx.AsyncClient(
                transport=transport, base_url="http://bls.internal", timeout=None
            )
        else:
            client = httpx.AsyncClient(base_url=server, timeout=None)
        sem = asyncio.Semaphore(max(jobs, 1))

        async def one(path: str, payload: dict) -> dict:
            async with sem:
                resp = await client.post(path, json=payload)
            if resp.status_code == 422:
                raise ConfigRejected(_format_422(resp.json()))
            resp.raise_for_status()
            return resp.json()

        try:
            return list(await asyncio.gather(*(one(p, pl) for p, pl in requests)))
        finally:
            await client.aclose()

    try:
        return asyncio.run(go())
    except ConfigRejected as exc:
        _fail(EXIT_CONFIG, f"request rejected: {exc}")
    except httpx.HTTPError as exc:
        _fail(EXIT_SOLVER, f"service request failed: {exc}")
    raise AssertionError("unreachable")


def _resolve_out(cfg: RunConfig, out: str | None) -> Path:
    return Path(out or cfg.out_dir or ".")


def _common_options(fn):
    fn = click.option("--server", default=None, help="Remote service URL (default: in-process).")(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None,
                      help="Output format (overrides config).")(fn)
    fn = click.option("--jobs", default=1, show_default=True, help="Max concurrent requests.")(fn)
    fn = click.option("--out", default=None, help="Output directory (overrides config).")(fn)
    fn = click.option("--config", "-c", "config_path", required=True,
                      type=click.Path(), help="JSON config file.")(fn)
    return fn


@click.group()
def main() -> None:
    """Sensitivity-analysis experiments for bilevel programs."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("bls.service:app", host=host, port=port)


@main.command()
@_common_options
def tune(config_path, out, jobs, fmt, server) -> None:
    """Run upper-level optimizations; one trace file per (seed, method)."""
    cfg = _load_config(config_path)
    fmt = fmt or cfg.format
    out_dir = _resolve_out(cfg, out)
    runs = [(method, seed) for method in cfg.methods for seed in cfg.seeds]
    requests = [
        (
            "/tune",
            {
                "problem": cfg.problem.model_dump(mode="json"),
                "method": method,
                "seed": seed,
                "lower": cfg.lower.model_dump(mode="json"),
                "upper": cfg.upper.model_dump(mode="json"),
            },
        )
        for method, seed in runs
    ]
    responses = _post_all(server, requests, jobs)
    trace_columns = [
        "iteration", "lower_solve_count", "cumulative_lower_solves",
        "f_U", "grad_norm", "wall_ms",
    ]
    any_failure = False
    summary_rows = []
    for (method, seed), resp in zip(runs, responses):
        name = f"{cfg.problem.name}_{method}_seed{seed}.{fmt}"
        write_rows(out_dir / name, resp["rows"], fmt,
                   fieldnames=None if resp["rows"] else trace_columns)
        summary = dict(resp["summary"])
        summary["trace_file"] = name
        summary["run_status"] = resp["status"]
        summary_rows.append(summary)
        if resp["status"] == "solver_failure":
            any_failure = True
        final = summary["final_f_U"]  # None when the run produced no iterate
        click.echo(
            f"{cfg.problem.name} method={method} seed={seed}: {resp['status']} "
            f"(status={summary['status']}, lower solves={summary['cumulative_lower_solves']}, "
            f"final f_U={'n/a' if final is None else format(final, '.6g')})"
        )
    write_rows(out_dir / f"summary.{fmt}", summary_rows, fmt)
    sys.exit(EXIT_SOLVER if any_failure else EXIT_OK)


@main.command()
@_common_options
@click.option("--expect-inexact", is_flag=True, default=False,
              help="Report tolerance breaches without failing.")
def gradcheck(config_path, out, jobs, fmt, server, expect_inexact) -> None:
    """Check implicit derivatives against finite-difference oracles."""
    cfg = _load_config(config_path)
    fmt = fmt or cfg.format
    out_dir = _resolve_out(cfg, out)
    options = cfg.gradcheck.model_dump(mode="json")
    if expect_inexact:
        options["expect_inexact"] = True
    (resp,) = _post_all(
        server,
        [
            (
                "/gradcheck",
                {
                    "problem": cfg.problem.model_dump(mode="json"),
                    "seed": cfg.seeds[0],
                    "options": options,
                },
            )
        ],
        jobs,
    )
    write_rows(out_dir / f"gradcheck.{fmt}", resp["rows"], fmt)
    for row in resp["rows"]:
        mark = "ok" if row["passed"] else "FAIL"
        click.echo(f"{row['quantity']}: {row['max_rel_error']:.3e} "
                   f"(tol {row['tolerance']:.1e}) {mark}")
    click.echo(f"lower residual at evaluation point: {resp['lower_residual']:.3e}")
    sys.exit(EXIT_OK if resp["ok"] else EXIT_VERIFY)


@main.command()
@_common_options
def bounds(config_path, out, jobs, fmt, server) -> None:
    """Perturbation study of measured errors against their certificates."""
    cfg = _load_config(config_path)
    fmt = fmt or cfg.format
    out_dir = _resolve_out(cfg, out)
    (resp,) = _post_all(
        server,
        [
            (
                "/bounds",
                {
                    "problem": cfg.problem.model_dump(mode="json"),
                    "seed": cfg.seeds[0],
                    "options": cfg.bounds.model_dump(mode="json"),
                },
            )
        ],
        jobs,
    )
    write_rows(out_dir / f"bounds.{fmt}", resp["rows"], fmt)
    n_valid = sum(1 for r in resp["rows"] if r["valid_first"] and r["valid_second"])
    click.echo(f"bounds valid in {n_valid}/{len(resp['rows'])} trials")
    sys.exit(EXIT_OK if resp["ok"] else EXIT_VERIFY)


@main.command()
@_common_options
def landscape(config_path, out, jobs, fmt, server) -> None:
    """Export the principal-plane loss grid around an optimization path."""
    cfg = _load_config(config_path)
    fmt = fmt or cfg.format
    out_dir = _resolve_out(cfg, out)
    (resp,) = _post_all(
        server,
        [
            (
                "/landscape",
                {
                    "problem": cfg.problem.model_dump(mode="json"),
                    "seed": cfg.seeds[0],
                    "method": cfg.landscape.method,
                    "grid": cfg.landscape.grid,
                    "span": cfg.landscape.span,
                    "lower": cfg.lower.model_dump(mode="json"),
                    "upper": cfg.upper.model_dump(mode="json"),
                },
            )
        ],
        jobs,
    )
    write_rows(out_dir / f"landscape_grid.{fmt}", resp["grid_rows"], fmt)
    write_rows(out_dir / f"landscape_path.{fmt}", resp["path_rows"], fmt)
    click.echo(f"landscape status: {resp['status']} "
               f"({len(resp['grid_rows'])} grid points, {len(resp['path_rows'])} path points)")
    sys.exit(EXIT_OK if resp["status"] == "ok" else EXIT_SOLVER)


if __name__ == "__main__":
    main()
