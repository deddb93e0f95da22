"""Central finite-difference oracles.

Every partial-derivative bundle field can be produced here numerically, in
the same block-stacked layout the rest of the package uses.  These routines
are also the independent cross-checks for the implicit-differentiation
outputs, so nothing in here may call back into that machinery.

Steps scale per coordinate as ``h_i = base * max(1, |x_i|)``.  Second-order
stencils use the symmetric four-point rule, which makes numeric Hessians of
scalars symmetric by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EvaluatorFailure, NumericDiffFailure
from .linalg import StackedMatrix

__all__ = [
    "DiffConfig",
    "jacobian_fd",
    "stacked_second_fd",
    "scalar_hessian_fd",
    "mixed_scalar_fd",
    "total_gradient_fd",
    "total_hessian_fd",
    "stacked_derivative_fd",
]


@dataclass(frozen=True)
class DiffConfig:
    """Step sizes for central differences.

    ``step_first`` feeds first-order stencils, ``step_second`` the nested
    second-order ones (larger, to balance truncation against cancellation
    in 64-bit floats).
    """

    step_first: float = 1e-5
    step_second: float = 1e-4

    def __post_init__(self):
        if self.step_first <= 0 or self.step_second <= 0:
            raise ValueError("steps must be positive")


def _steps(x: np.ndarray, base: float) -> np.ndarray:
    return base * np.maximum(1.0, np.abs(x))


def _eval(f, *args) -> np.ndarray:
    try:
        out = np.atleast_1d(np.asarray(f(*args), dtype=np.float64)).reshape(-1)
    except Exception as exc:  # noqa: BLE001 - user evaluator boundary
        raise EvaluatorFailure(f"evaluator raised: {exc!r}") from exc
    if not np.all(np.isfinite(out)):
        raise NumericDiffFailure("evaluator returned non-finite values on the stencil")
    return out


def jacobian_fd(f: Callable, x, cfg: DiffConfig = DiffConfig()) -> np.ndarray:
    """Jacobian of ``f`` at ``x`` by central differences, one column per input.

    Exact (up to roundoff) for polynomials of degree <= 2.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    h = _steps(x, cfg.step_first)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((_eval(f, x + e) - _eval(f, x - e)) / (2.0 * h[i]))
    if not cols:
        return np.zeros((_eval(f, x).size, 0))
    return np.stack(cols, axis=1)


def scalar_hessian_fd(f: Callable, x, cfg: DiffConfig = DiffConfig()) -> np.ndarray:
    """Symmetric Hessian of a scalar function via pairwise four-point stencils."""
    g = lambda v: np.array([f(v)], dtype=np.float64)  # noqa: E731
    return stacked_second_fd_single(g, x, cfg)


def stacked_second_fd_single(g: Callable, x, cfg: DiffConfig) -> np.ndarray:
    """Hessian blocks of a vector function in one variable, returned stacked.

    Helper used for the single-argument case; returns the dense
    ``(q*d, d)`` array for ``q`` outputs and ``d = len(x)``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = x.size
    h = _steps(x, cfg.step_second)
    g0 = _eval(g, x)
    q = g0.size
    out = np.zeros((q, d, d))
    for a in range(d):
        ea = np.zeros(d)
        ea[a] = h[a]
        out[:, a, a] = (_eval(g, x + ea) - 2.0 * g0 + _eval(g, x - ea)) / (h[a] ** 2)
        for b in range(a + 1, d):
            eb = np.zeros(d)
            eb[b] = h[b]
            val = (
                _eval(g, x + ea + eb)
                - _eval(g, x + ea - eb)
                - _eval(g, x - ea + eb)
                + _eval(g, x - ea - eb)
            ) / (4.0 * h[a] * h[b])
            out[:, a, b] = val
            out[:, b, a] = val
    return out.reshape(q * d, d)


def _mixed_tensor(g: Callable, x, y, cfg: DiffConfig) -> np.ndarray:
    """``t[i, a, b] = d^2 g_i / dx_a dy_b`` via the four-point cross stencil."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    hx = _steps(x, cfg.step_second)
    hy = _steps(y, cfg.step_second)
    q = _eval(g, x, y).size
    out = np.zeros((q, x.size, y.size))
    for a in range(x.size):
        ea = np.zeros(x.size)
        ea[a] = hx[a]
        for b in range(y.size):
            eb = np.zeros(y.size)
            eb[b] = hy[b]
            out[:, a, b] = (
                _eval(g, x + ea, y + eb)
                - _eval(g, x + ea, y - eb)
                - _eval(g, x - ea, y + eb)
                + _eval(g, x - ea, y - eb)
            ) / (4.0 * hx[a] * hy[b])
    return out


def mixed_scalar_fd(f: Callable, x, y, cfg: DiffConfig = DiffConfig()) -> np.ndarray:
    """Mixed partial ``d^2 f / dx dy`` of a scalar, shape ``(len(x), len(y))``."""
    g = lambda a, b: np.array([f(a, b)], dtype=np.float64)  # noqa: E731
    return _mixed_tensor(g, x, y, cfg)[0]


def stacked_second_fd(
    g: Callable,
    x,
    y,
    which: str,
    cfg: DiffConfig = DiffConfig(),
) -> StackedMatrix:
    """Stacked second partials of a two-argument vector function.

    ``which`` selects the derivative: ``"xx"`` and ``"yy"`` are the per-output
    Hessians in the first/second variable, ``"xy"`` stacks
    ``D_y(grad_x g_i)`` blocks and ``"yx"`` the transposed pairing.  Block
    ``i`` of the result is the requested second partial of the ``i``-th
    scalar output.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if which == "xx":
        data = stacked_second_fd_single(lambda v: g(v, y), x, cfg)
        return StackedMatrix(data.shape[0] // x.size, x.size, x.size, data)
    if which == "yy":
        data = stacked_second_fd_single(lambda v: g(x, v), y, cfg)
        return StackedMatrix(data.shape[0] // y.size, y.size, y.size, data)
    if which == "xy":
        t = _mixed_tensor(g, x, y, cfg)
        return StackedMatrix.from_tensor(t)
    if which == "yx":
        t = _mixed_tensor(lambda b, a: g(a, b), y, x, cfg)
        return StackedMatrix.from_tensor(t)
    raise ValueError(f"which must be one of 'xx', 'xy', 'yx', 'yy', got {which!r}")


def total_gradient_fd(
    problem,
    p,
    solve: Callable[[np.ndarray], np.ndarray],
    cfg: DiffConfig = DiffConfig(),
) -> np.ndarray:
    """Central difference of ``p -> f_U(z*(p), p)`` as a ``1 x n`` row.

    ``solve`` maps a parameter vector to the lower-level solution; it is
    re-invoked at every stencil point and should be tight enough that step
    error dominates solver noise.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)

    def phi(q: np.ndarray) -> float:
        return float(problem.upper(np.asarray(solve(q), dtype=np.float64), q))

    h = _steps(p, cfg.step_first)
    row = np.zeros(p.size)
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = h[j]
        row[j] = (phi(p + e) - phi(p - e)) / (2.0 * h[j])
    if not np.all(np.isfinite(row)):
        raise NumericDiffFailure("total gradient stencil produced non-finite values")
    return row.reshape(1, -1)


def total_hessian_fd(
    problem,
    p,
    solve: Callable[[np.ndarray], np.ndarray],
    cfg: DiffConfig = DiffConfig(),
) -> np.ndarray:
    """Symmetric finite-difference Hessian of ``p -> f_U(z*(p), p)``."""

    def phi(q: np.ndarray) -> float:
        return float(problem.upper(np.asarray(solve(q), dtype=np.float64), q))

    return scalar_hessian_fd(phi, p, cfg)


def stacked_derivative_fd(
    matrix_fn: Callable[[np.ndarray], np.ndarray],
    p,
    cfg: DiffConfig = DiffConfig(),
) -> StackedMatrix:
    """Differentiate a matrix-valued map column by column into stacked blocks.

    Given ``F(p)`` of shape ``(m, n)`` with ``n = len(p)``, block ``i`` of the
    result is the ``n x n`` matrix ``[dF[i, a] / dp_j]_{a j}`` -- the Hessian
    of the ``i``-th implicit output when ``F`` is its Jacobian map.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    h = _steps(p, cfg.step_second)
    f0 = np.asarray(matrix_fn(p), dtype=np.float64)
    m, n = f0.shape
    if n != p.size:
        raise NumericDiffFailure(
            f"matrix map returns {n} columns but p has {p.size} entries"
        )
    out = np.zeros((m, n, n))
    for j in range(n):
        e = np.zeros_like(p)
        e[j] = h[j]
        fp = np.asarray(matrix_fn(p + e), dtype=np.float64)
        fm = np.asarray(matrix_fn(p - e), dtype=np.float64)
        out[:, :, j] = (fp - fm) / (2.0 * h[j])
    if not np.all(np.isfinite(out)):
        raise NumericDiffFailure("stacked derivative stencil produced non-finite values")
    return StackedMatrix.from_tensor(out)
