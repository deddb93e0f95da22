import numpy as np
import pytest

from bls.problems import (
    make_diag_ridge,
    make_inverse_lqr,
    make_quadratic_toy,
    make_ridge,
    make_scalar_cos,
)


@pytest.fixture(scope="session")
def toy():
    return make_quadratic_toy(4, 4, seed=0)


@pytest.fixture(scope="session")
def cosfix():
    return make_scalar_cos(p0=0.8)


@pytest.fixture(scope="session")
def ridge_small():
    return make_ridge(features=8, samples=40, seed=0)


@pytest.fixture(scope="session")
def diag_small():
    return make_diag_ridge(features=6, samples=40, seed=0)


@pytest.fixture(scope="session")
def lqr():
    return make_inverse_lqr(seed=0)


def rel_err(value, reference) -> float:
    num = float(np.linalg.norm(np.asarray(value) - np.asarray(reference)))
    den = float(np.linalg.norm(np.asarray(reference)))
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den
