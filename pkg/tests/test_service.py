import numpy as np
import pytest
from fastapi.testclient import TestClient

from bls.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_problem_catalog(client):
    resp = client.get("/problems")
    assert resp.status_code == 200
    names = {entry["name"] for entry in resp.json()}
    assert names == {"quadratic_toy", "scalar_cos", "ridge", "diag_ridge", "inverse_lqr"}
    ridge = next(e for e in resp.json() if e["name"] == "ridge")
    assert ridge["defaults"]["features"] == 20


def test_tune_roundtrip(client):
    resp = client.post(
        "/tune",
        json={
            "problem": {"name": "quadratic_toy", "m": 3, "n": 3},
            "method": "newton",
            "seed": 0,
            "upper": {"max_iter": 10},
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["summary"]["status"] == "converged"
    first = body["rows"][0]
    assert first["iteration"] == 0
    assert "p_0" in first and "p_2" in first
    assert body["rows"][-1]["cumulative_lower_solves"] == body["summary"]["cumulative_lower_solves"]


def test_unknown_key_rejected_with_name(client):
    resp = client.post(
        "/tune",
        json={"problem": {"name": "ridge", "stepp": 1}, "method": "newton"},
    )
    assert resp.status_code == 422
    assert "stepp" in resp.text


def test_unknown_problem_rejected(client):
    resp = client.post("/tune", json={"problem": {"name": "mystery"}})
    assert resp.status_code == 422


def test_gradcheck_endpoint(client):
    resp = client.post(
        "/gradcheck", json={"problem": {"name": "quadratic_toy"}, "seed": 0}
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["ok"] and body["all_within_tolerance"]
    assert {row["quantity"] for row in body["rows"]} == {
        "ift_jacobian_vs_fd",
        "ift_hessian_vs_fd_of_jacobian",
        "total_gradient_vs_fd",
        "total_hessian_vs_fd",
    }


def test_bounds_endpoint(client):
    resp = client.post(
        "/bounds",
        json={
            "problem": {"name": "ridge", "features": 6, "samples": 30},
            "seed": 1,
            "options": {"deltas": [1e-3], "trials": 3},
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["ok"]
    assert len(body["rows"]) == 3
    for row in body["rows"]:
        assert row["err_jacobian"] <= row["bound_first"]
        assert row["bound_reg_star"] <= row["bound_reg_eps0"] + 1e-15


def test_landscape_endpoint(client):
    resp = client.post(
        "/landscape",
        json={
            "problem": {"name": "diag_ridge", "features": 2, "samples": 30},
            "seed": 0,
            "grid": 5,
            "span": 1.0,
            "lower": {"tol": 1e-12},
            "upper": {"max_iter": 25},
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] in ("ok", "degenerate")
    assert len(body["grid_rows"]) == 25
    # two parameters: the path lies in the projection plane, so the loss at
    # the reconstructed path points reproduces the trace values
    for row in body["path_rows"]:
        assert abs(row["f_U"] - row["f_U_trace"]) < 1e-9


def test_landscape_single_parameter_gets_line_slice(client):
    resp = client.post(
        "/landscape",
        json={
            "problem": {"name": "scalar_cos"},
            "grid": 7,
            "upper": {"max_iter": 10},
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "degenerate"
    assert body["degenerate"]
    assert len(body["grid_rows"]) == 7


def test_tune_cross_entropy_variant(client):
    resp = client.post(
        "/tune",
        json={
            "problem": {
                "name": "ridge",
                "features": 4,
                "samples": 40,
                "upper_loss": "cross_entropy",
                "classes": 3,
            },
            "method": "newton",
            "seed": 0,
            "upper": {"max_iter": 10},
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    values = [row["f_U"] for row in body["rows"]]
    assert values == sorted(values, reverse=True) or values[-1] <= values[0]


def test_tune_response_rows_are_finite(client):
    resp = client.post(
        "/tune",
        json={
            "problem": {"name": "ridge", "features": 6, "samples": 30},
            "method": "gd",
            "seed": 2,
            "upper": {"max_iter": 15},
        },
    )
    body = resp.json()
    for row in body["rows"]:
        assert np.isfinite(row["f_U"])
        assert np.isfinite(row["grad_norm"])
