"""Built-in desk-scale problem instances with closed-form or oracle-checkable
structure.

Every instance is reconstructed bit-identically from its seed, carries
analytic partial evaluators wherever they are cheap, and stashes reference
data/oracles for cross-checking (normal-equation solves, clamped solutions,
hidden references).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import BilevelError, DimensionMismatchError, InfeasibleEvaluation
from .problem import AnalyticPartials, BilevelProblem
from .solvers import BarrierSpec, apply_barrier

__all__ = [
    "ProblemInstance",
    "make_quadratic_toy",
    "make_scalar_cos",
    "make_ridge",
    "make_diag_ridge",
    "make_inverse_lqr",
    "solve_box_qp",
    "PROBLEM_BUILDERS",
    "build_instance",
]

LN10 = math.log(10.0)


class InfeasibleExpert(BilevelError):
    """Generated expert data violates the control limits."""


@dataclass(frozen=True)
class ProblemInstance:
    """A named bilevel problem with seeds, starting points, and oracles."""

    name: str
    problem: BilevelProblem
    p0: np.ndarray
    z0: np.ndarray
    rng_seed: int
    known_optimum: dict | None = None
    oracles: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)


def _ro(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Quadratic toy: f_L = 1/2 z' A z - p' z with SPD A, f_U = |z - z_target|^2.
# Closed forms: z* = A^{-1} p, D_p z* = A^{-1}, H_p z* = 0.
# ---------------------------------------------------------------------------


def make_quadratic_toy(m: int = 4, n: int = 4, seed: int = 0) -> ProblemInstance:
    """Strictly convex quadratic lower problem with linear parameterization."""
    if m != n:
        raise DimensionMismatchError("quadratic toy requires m == n")
    rng = np.random.default_rng(seed)
    q_mat, _ = np.linalg.qr(rng.normal(size=(m, m)))
    eigs = rng.uniform(1.0, 10.0, size=m)
    a = _ro(q_mat @ np.diag(eigs) @ q_mat.T)
    a_inv = _ro(np.linalg.inv(a))
    z_target = _ro(rng.normal(size=m))

    def lower_objective(z, p):
        return 0.5 * z @ (a @ z) - p @ z

    def fixed_point(z, p):
        return a @ z - p

    def upper(z, p):
        d = z - z_target
        return float(d @ d)

    partials = AnalyticPartials(
        dz_k=lambda z, p: a,
        dp_k=lambda z, p: -np.eye(m),
        dz_fu=lambda z, p: (2.0 * (z - z_target)).reshape(1, -1),
        dp_fu=lambda z, p: np.zeros((1, n)),
        hp_k=lambda z, p: np.zeros((m * n, n)),
        dpz_k=lambda z, p: np.zeros((m * n, m)),
        dzp_k=lambda z, p: np.zeros((m * m, n)),
        hz_k=lambda z, p: np.zeros((m * m, m)),
        hp_fu=lambda z, p: np.zeros((n, n)),
        hz_fu=lambda z, p: 2.0 * np.eye(m),
        dzp_fu=lambda z, p: np.zeros((m, n)),
    )
    problem = BilevelProblem(
        dim_z=m,
        dim_p=n,
        upper=upper,
        lower_objective=lower_objective,
        fixed_point=fixed_point,
        partials=partials,
    )
    p_star = a @ z_target
    return ProblemInstance(
        name="quadratic_toy",
        problem=problem,
        p0=_ro(np.zeros(n)),
        z0=_ro(np.zeros(m)),
        rng_seed=seed,
        known_optimum={"p": _ro(p_star), "f_U": 0.0, "note": "z* hits z_target"},
        oracles={
            "A": a,
            "A_inv": a_inv,
            "z_target": z_target,
            "z_star": lambda p: a_inv @ np.asarray(p, dtype=np.float64),
            "dp_z": lambda p: a_inv,
            "total_hessian": lambda p: 2.0 * a_inv.T @ a_inv,
        },
        meta={"m": m, "n": n},
    )


# ---------------------------------------------------------------------------
# Scalar fixed-point fixture: k(z, p) = z - cos(p), f_U = z^2.
# z* = cos(p), D_p z* = -sin(p), H_p z* = -cos(p).
# ---------------------------------------------------------------------------


def make_scalar_cos(p0: float = 0.8, seed: int = 0) -> ProblemInstance:
    """One-dimensional fixture whose implicit derivatives are classical calculus."""

    def fixed_point(z, p):
        return np.array([z[0] - math.cos(p[0])])

    def upper(z, p):
        return float(z[0] ** 2)

    partials = AnalyticPartials(
        dz_k=lambda z, p: np.array([[1.0]]),
        dp_k=lambda z, p: np.array([[math.sin(p[0])]]),
        dz_fu=lambda z, p: np.array([[2.0 * z[0]]]),
        dp_fu=lambda z, p: np.zeros((1, 1)),
        hp_k=lambda z, p: np.array([[math.cos(p[0])]]),
        dpz_k=lambda z, p: np.zeros((1, 1)),
        dzp_k=lambda z, p: np.zeros((1, 1)),
        hz_k=lambda z, p: np.zeros((1, 1)),
        hp_fu=lambda z, p: np.zeros((1, 1)),
        hz_fu=lambda z, p: np.array([[2.0]]),
        dzp_fu=lambda z, p: np.zeros((1, 1)),
    )
    problem = BilevelProblem(
        dim_z=1, dim_p=1, upper=upper, fixed_point=fixed_point, partials=partials
    )
    return ProblemInstance(
        name="scalar_cos",
        problem=problem,
        p0=_ro(np.array([p0])),
        z0=_ro(np.zeros(1)),
        rng_seed=seed,
        known_optimum={"f_U": 0.0, "note": "any p with cos(p) = 0"},
        oracles={
            "z_star": lambda p: np.array([math.cos(p[0])]),
            "dp_z": lambda p: np.array([[-math.sin(p[0])]]),
            "hp_z": lambda p: np.array([[-math.cos(p[0])]]),
            "total_hessian": lambda p: np.array([[-2.0 * math.cos(2.0 * p[0])]]),
        },
    )


# ---------------------------------------------------------------------------
# Ridge regression with a log10 regularization weight.
# ---------------------------------------------------------------------------


def _ridge_data(features: int, samples: int, seed: int, noise: float):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(samples, features))
    w = rng.normal(size=features)
    y = x @ w + noise * rng.normal(size=samples)
    half = samples // 2
    return _ro(x[:half]), _ro(y[:half]), _ro(x[half:]), _ro(y[half:])


def make_ridge(
    features: int = 20,
    samples: int = 100,
    seed: int = 0,
    noise: float = 0.1,
    p0: float = 0.0,
    upper_loss: str = "squared",
    classes: int = 3,
) -> ProblemInstance:
    """Least-squares lower problem with a single Tikhonov weight ``10^p``.

    ``f_L = |X z - Y|^2 + 10^p |z|^2`` on the train half; the test half
    provides the upper loss (squared error by default, softmax
    cross-entropy with numeric upper partials as an optional variant).
    """
    if upper_loss == "cross_entropy":
        return _make_ridge_cross_entropy(features, samples, seed, noise, p0, classes)
    if upper_loss != "squared":
        raise ValueError(f"unknown upper_loss {upper_loss!r}")
    x_tr, y_tr, x_te, y_te = _ridge_data(features, samples, seed, noise)
    m = features
    gram_tr = _ro(2.0 * x_tr.T @ x_tr)
    xty_tr = _ro(2.0 * x_tr.T @ y_tr)
    gram_te = _ro(2.0 * x_te.T @ x_te)

    def weight(p):
        return 10.0 ** float(p[0])

    def lower_objective(z, p):
        r = x_tr @ z - y_tr
        return float(r @ r + weight(p) * (z @ z))

    def fixed_point(z, p):
        return gram_tr @ z - xty_tr + 2.0 * weight(p) * z

    def upper(z, p):
        r = x_te @ z - y_te
        return float(r @ r)

    def dzp_k_data(z, p):
        t = weight(p)
        data = np.zeros((m * m, 1))
        data[np.arange(m) * m + np.arange(m), 0] = 2.0 * LN10 * t
        return data

    partials = AnalyticPartials(
        dz_k=lambda z, p: gram_tr + 2.0 * weight(p) * np.eye(m),
        dp_k=lambda z, p: (2.0 * LN10 * weight(p) * z).reshape(m, 1),
        dz_fu=lambda z, p: (2.0 * (x_te @ z - y_te) @ x_te).reshape(1, m),
        dp_fu=lambda z, p: np.zeros((1, 1)),
        hp_k=lambda z, p: (2.0 * LN10**2 * weight(p) * z).reshape(m, 1),
        dpz_k=lambda z, p: 2.0 * LN10 * weight(p) * np.eye(m),
        dzp_k=dzp_k_data,
        hz_k=lambda z, p: np.zeros((m * m, m)),
        hp_fu=lambda z, p: np.zeros((1, 1)),
        hz_fu=lambda z, p: gram_te,
        dzp_fu=lambda z, p: np.zeros((m, 1)),
    )
    problem = BilevelProblem(
        dim_z=m,
        dim_p=1,
        upper=upper,
        lower_objective=lower_objective,
        fixed_point=fixed_point,
        partials=partials,
    )

    def normal_solve(p):
        t = weight(np.atleast_1d(p))
        return np.linalg.solve(x_tr.T @ x_tr + t * np.eye(m), x_tr.T @ y_tr)

    return ProblemInstance(
        name="ridge",
        problem=problem,
        p0=_ro(np.array([p0])),
        z0=_ro(np.zeros(m)),
        rng_seed=seed,
        oracles={
            "X_train": x_tr,
            "y_train": y_tr,
            "X_test": x_te,
            "y_test": y_te,
            "normal_solve": normal_solve,
        },
        meta={"features": features, "samples": samples, "noise": noise},
    )


def _make_ridge_cross_entropy(
    features: int, samples: int, seed: int, noise: float, p0: float, classes: int
) -> ProblemInstance:
    """Least-squares-to-one-hot lower problem scored by test cross-entropy."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(samples, features))
    w = rng.normal(size=(features, classes))
    logits = x @ w + noise * rng.normal(size=(samples, classes))
    labels = np.argmax(logits, axis=1)
    y = np.eye(classes)[labels]
    half = samples // 2
    x_tr, y_tr = _ro(x[:half]), _ro(y[:half])
    x_te, labels_te = _ro(x[half:]), labels[half:]
    m = features * classes
    gram_tr = _ro(2.0 * x_tr.T @ x_tr)
    xty_tr = _ro(2.0 * x_tr.T @ y_tr)

    def weight(p):
        return 10.0 ** float(p[0])

    def unpack(z):
        return np.asarray(z, dtype=np.float64).reshape(features, classes, order="F")

    def lower_objective(z, p):
        r = x_tr @ unpack(z) - y_tr
        return float(np.sum(r * r) + weight(p) * (z @ z))

    def fixed_point(z, p):
        grad = gram_tr @ unpack(z) - xty_tr + 2.0 * weight(p) * unpack(z)
        return grad.reshape(-1, order="F")

    def upper(z, p):
        scores = x_te @ unpack(z)
        scores = scores - scores.max(axis=1, keepdims=True)
        logq = scores - np.log(np.exp(scores).sum(axis=1, keepdims=True))
        return float(-logq[np.arange(len(labels_te)), labels_te].sum())

    def dz_k(z, p):
        return np.kron(np.eye(classes), gram_tr) + 2.0 * weight(p) * np.eye(m)

    def dzp_k_data(z, p):
        data = np.zeros((m * m, 1))
        data[np.arange(m) * m + np.arange(m), 0] = 2.0 * LN10 * weight(p)
        return data

    partials = AnalyticPartials(
        dz_k=dz_k,
        dp_k=lambda z, p: (2.0 * LN10 * weight(p) * np.asarray(z)).reshape(m, 1),
        hp_k=lambda z, p: (2.0 * LN10**2 * weight(p) * np.asarray(z)).reshape(m, 1),
        dpz_k=lambda z, p: 2.0 * LN10 * weight(p) * np.eye(m),
        dzp_k=dzp_k_data,
        hz_k=lambda z, p: np.zeros((m * m, m)),
    )
    problem = BilevelProblem(
        dim_z=m,
        dim_p=1,
        upper=upper,
        lower_objective=lower_objective,
        fixed_point=fixed_point,
        partials=partials,
    )
    return ProblemInstance(
        name="ridge_cross_entropy",
        problem=problem,
        p0=_ro(np.array([p0])),
        z0=_ro(np.zeros(m)),
        rng_seed=seed,
        oracles={"X_train": x_tr, "Y_train": y_tr, "X_test": x_te},
        meta={"features": features, "samples": samples, "classes": classes},
    )


# ---------------------------------------------------------------------------
# Diagonal ridge: one log10 weight per coordinate.
# ---------------------------------------------------------------------------


def make_diag_ridge(
    features: int = 10,
    samples: int = 80,
    seed: int = 0,
    noise: float = 0.1,
    p0: float = 0.0,
) -> ProblemInstance:
    """Per-coordinate Tikhonov weights ``10^{p_i}``; exercises n > 1 blocks."""
    x_tr, y_tr, x_te, y_te = _ridge_data(features, samples, seed, noise)
    m = features
    n = features
    gram_tr = _ro(2.0 * x_tr.T @ x_tr)
    xty_tr = _ro(2.0 * x_tr.T @ y_tr)
    gram_te = _ro(2.0 * x_te.T @ x_te)

    def weights(p):
        return 10.0 ** np.asarray(p, dtype=np.float64)

    def lower_objective(z, p):
        r = x_tr @ z - y_tr
        return float(r @ r + weights(p) @ (z * z))

    def fixed_point(z, p):
        return gram_tr @ z - xty_tr + 2.0 * weights(p) * z

    def upper(z, p):
        r = x_te @ z - y_te
        return float(r @ r)

    def hp_k_data(z, p):
        t = weights(p)
        data = np.zeros((m * n, n))
        data[np.arange(m) * n + np.arange(n), np.arange(n)] = 2.0 * LN10**2 * t * z
        return data

    def dpz_k_data(z, p):
        t = weights(p)
        data = np.zeros((m * n, m))
        data[np.arange(m) * n + np.arange(n), np.arange(m)] = 2.0 * LN10 * t
        return data

    def dzp_k_data(z, p):
        t = weights(p)
        data = np.zeros((m * m, n))
        data[np.arange(m) * m + np.arange(m), np.arange(n)] = 2.0 * LN10 * t
        return data

    partials = AnalyticPartials(
        dz_k=lambda z, p: gram_tr + 2.0 * np.diag(weights(p)),
        dp_k=lambda z, p: 2.0 * LN10 * np.diag(weights(p) * z),
        dz_fu=lambda z, p: (2.0 * (x_te @ z - y_te) @ x_te).reshape(1, m),
        dp_fu=lambda z, p: np.zeros((1, n)),
        hp_k=hp_k_data,
        dpz_k=dpz_k_data,
        dzp_k=dzp_k_data,
        hz_k=lambda z, p: np.zeros((m * m, m)),
        hp_fu=lambda z, p: np.zeros((n, n)),
        hz_fu=lambda z, p: gram_te,
        dzp_fu=lambda z, p: np.zeros((m, n)),
    )
    problem = BilevelProblem(
        dim_z=m,
        dim_p=n,
        upper=upper,
        lower_objective=lower_objective,
        fixed_point=fixed_point,
        partials=partials,
    )

    def normal_solve(p):
        return np.linalg.solve(
            x_tr.T @ x_tr + np.diag(weights(p)), x_tr.T @ y_tr
        )

    return ProblemInstance(
        name="diag_ridge",
        problem=problem,
        p0=_ro(np.full(n, p0)),
        z0=_ro(np.zeros(m)),
        rng_seed=seed,
        oracles={
            "X_train": x_tr,
            "y_train": y_tr,
            "X_test": x_te,
            "y_test": y_te,
            "normal_solve": normal_solve,
        },
        meta={"features": features, "samples": samples, "noise": noise},
    )


# ---------------------------------------------------------------------------
# Inverse optimal control: recover the reference an expert tracks.
# ---------------------------------------------------------------------------


def solve_box_qp(g_mat, h_vec, lim: float, max_iter: int = 400) -> np.ndarray:
    """Exact minimizer of ``1/2 z'Gz + h'z`` subject to ``|z_i| <= lim``.

    Primal active-set iteration: fix the binding coordinates at their
    bounds, solve the free subsystem, then repair the worst primal or dual
    violation until the KKT conditions hold.
    """
    g_mat = np.asarray(g_mat, dtype=np.float64)
    h_vec = np.asarray(h_vec, dtype=np.float64).reshape(-1)
    m = h_vec.size
    state = np.zeros(m, dtype=int)  # 0 free, +1/-1 clamped at +/-lim
    tol = 1e-10 * (1.0 + float(np.abs(h_vec).max(initial=0.0)))
    for _ in range(max_iter):
        free = state == 0
        z = lim * state.astype(np.float64)
        if free.any():
            rhs = -(h_vec[free] + g_mat[np.ix_(free, ~free)] @ z[~free])
            z[free] = np.linalg.solve(g_mat[np.ix_(free, free)], rhs)
        viol = np.where(free, np.abs(z) - lim, -np.inf)
        worst = int(np.argmax(viol))
        if viol[worst] > tol:
            state[worst] = 1 if z[worst] > 0 else -1
            continue
        grad = g_mat @ z + h_vec
        mult = np.where(state != 0, -state * grad, np.inf)
        worst = int(np.argmin(mult))
        if state[worst] != 0 and mult[worst] < -tol:
            state[worst] = 0
            continue
        return z
    raise BilevelError("box QP active-set iteration did not settle")


def _chain_dynamics(state_dim: int, control_dim: int, dt: float):
    a = np.eye(state_dim)
    for i in range(state_dim - 1):
        a[i, i + 1] = dt
    b = np.zeros((state_dim, control_dim))
    for j in range(control_dim):
        b[state_dim - control_dim + j, j] = dt
    # Kalman controllability check
    blocks = [b]
    for _ in range(state_dim - 1):
        blocks.append(a @ blocks[-1])
    if np.linalg.matrix_rank(np.hstack(blocks)) != state_dim:
        raise BilevelError("chain dynamics are not controllable for these dims")
    return a, b


def make_inverse_lqr(
    state_dim: int = 2,
    control_dim: int = 1,
    horizon: int = 10,
    u_lim: float | None = None,
    barrier_alpha: float | None = None,
    seed: int = 0,
    dt: float = 0.1,
    state_weight: float = 1.0,
    control_weight: float = 0.1,
) -> ProblemInstance:
    """Tracking-cost inverse optimal control with states eliminated by rollout.

    The lower variable is the stacked control sequence; the parameter
    stacks the state and control references.  Expert trajectories come
    from solving the control problem at a hidden reference (clamped
    exactly when ``u_lim`` is set).  With ``u_lim`` and ``barrier_alpha``
    the lower problem is the log-barrier smoothing of the box constraint,
    keeping every derivative defined.
    """
    if barrier_alpha is not None and u_lim is None:
        raise ValueError("barrier_alpha requires u_lim")
    if u_lim is not None and barrier_alpha is None:
        barrier_alpha = 100.0
    a_mat, b_mat = _chain_dynamics(state_dim, control_dim, dt)
    nx, nu, n_steps = state_dim, control_dim, horizon
    m = nu * n_steps
    n = nx * n_steps + nu * n_steps

    rng = np.random.default_rng(seed)
    x0 = np.zeros(nx)
    x0[0] = 1.0
    target = rng.normal(size=nx)

    powers = [np.eye(nx)]
    for _ in range(n_steps):
        powers.append(a_mat @ powers[-1])
    phi_x0 = np.concatenate([powers[i] @ x0 for i in range(1, n_steps + 1)])
    gamma = np.zeros((nx * n_steps, m))
    for i in range(1, n_steps + 1):
        for j in range(i):
            gamma[(i - 1) * nx : i * nx, j * nu : (j + 1) * nu] = powers[i - 1 - j] @ b_mat
    q_bar = state_weight * np.eye(nx * n_steps)
    r_bar = control_weight * np.eye(m)
    g_mat = 2.0 * (gamma.T @ q_bar @ gamma + r_bar)
    dp_k_const = np.hstack([-2.0 * gamma.T @ q_bar, -2.0 * r_bar])

    def pack(x_ref, u_ref):
        return np.concatenate([np.asarray(x_ref).reshape(-1), np.asarray(u_ref).reshape(-1)])

    def unpack(p):
        p = np.asarray(p, dtype=np.float64).reshape(-1)
        return p[: nx * n_steps], p[nx * n_steps :]

    def lin_term(p):
        x_ref, u_ref = unpack(p)
        return 2.0 * gamma.T @ (q_bar @ (phi_x0 - x_ref)) - 2.0 * r_bar @ u_ref

    def unconstrained_solution(p):
        return np.linalg.solve(g_mat, -lin_term(p))

    def clamped_solution(p):
        if u_lim is None:
            return unconstrained_solution(p)
        return solve_box_qp(g_mat, lin_term(p), u_lim)

    # Hidden reference: morph from x0 toward a seeded target, scaled until
    # the unconstrained controls exceed the limit so constraints bind.
    weights_path = (np.arange(1, n_steps + 1) / n_steps)[:, None]
    base_ref = (1.0 - weights_path) * x0[None, :] + weights_path * target[None, :]
    scale = 1.0
    if u_lim is not None:
        for _ in range(40):
            p_try = pack(x0[None, :] + scale * (base_ref - x0[None, :]), np.zeros(m))
            if float(np.abs(unconstrained_solution(p_try)).max()) >= 1.3 * u_lim:
                break
            scale *= 1.5
    x_ref_hidden = x0[None, :] + scale * (base_ref - x0[None, :])
    p_hidden = pack(x_ref_hidden, np.zeros(m))

    expert_u = clamped_solution(p_hidden)
    for _ in range(10):
        if u_lim is None or float(np.abs(expert_u).max()) <= u_lim + 1e-9:
            break
        scale *= 0.5
        x_ref_hidden = x0[None, :] + scale * (base_ref - x0[None, :])
        p_hidden = pack(x_ref_hidden, np.zeros(m))
        expert_u = clamped_solution(p_hidden)
    else:
        raise InfeasibleExpert("could not generate an expert within the control limits")
    expert_x = phi_x0 + gamma @ expert_u
    expert_u = _ro(expert_u)
    expert_x = _ro(expert_x)

    def quad_lower(z, p):
        x_ref, u_ref = unpack(p)
        ex = phi_x0 + gamma @ z - x_ref
        eu = z - u_ref
        return float(ex @ (q_bar @ ex) + eu @ (r_bar @ eu))

    def upper(z, p):
        ex = phi_x0 + gamma @ z - expert_x
        eu = z - expert_u
        return float(ex @ ex + eu @ eu)

    dz_fu = lambda z, p: (  # noqa: E731
        2.0 * (phi_x0 + gamma @ z - expert_x) @ gamma + 2.0 * (z - expert_u)
    ).reshape(1, m)
    hz_fu_const = 2.0 * (gamma.T @ gamma + np.eye(m))

    common_fu = dict(
        dz_fu=dz_fu,
        dp_fu=lambda z, p: np.zeros((1, n)),
        hp_fu=lambda z, p: np.zeros((n, n)),
        hz_fu=lambda z, p: hz_fu_const,
        dzp_fu=lambda z, p: np.zeros((m, n)),
    )

    if u_lim is None:
        partials = AnalyticPartials(
            dz_k=lambda z, p: g_mat,
            dp_k=lambda z, p: dp_k_const,
            hp_k=lambda z, p: np.zeros((m * n, n)),
            dpz_k=lambda z, p: np.zeros((m * n, m)),
            dzp_k=lambda z, p: np.zeros((m * m, n)),
            hz_k=lambda z, p: np.zeros((m * m, m)),
            **common_fu,
        )
        problem = BilevelProblem(
            dim_z=m,
            dim_p=n,
            upper=upper,
            lower_objective=quad_lower,
            fixed_point=lambda z, p: g_mat @ z + lin_term(p),
            partials=partials,
        )
        name = "inverse_lqr"
    else:
        alpha = float(barrier_alpha)
        lim = float(u_lim)

        def check_interior(z):
            if float(np.abs(z).max(initial=0.0)) >= lim:
                raise InfeasibleEvaluation("controls touch the box limit")

        def barrier_grad(z):
            check_interior(z)
            return ((lim - z) ** -1 - (lim + z) ** -1) / alpha

        def barrier_curv(z):
            return ((lim - z) ** -2 + (lim + z) ** -2) / alpha

        def barrier_third(z):
            return (2.0 * (lim - z) ** -3 - 2.0 * (lim + z) ** -3) / alpha

        def barrier_fixed_point(z, p):
            return g_mat @ z + lin_term(p) + barrier_grad(z)

        def barrier_dz_k(z, p):
            check_interior(z)
            return g_mat + np.diag(barrier_curv(z))

        def barrier_hz_k(z, p):
            check_interior(z)
            data = np.zeros((m * m, m))
            third = barrier_third(z)
            data[np.arange(m) * m + np.arange(m), np.arange(m)] = third
            return data

        constraints = []
        for i in range(m):
            constraints.append(lambda z, i=i: float(z[i] - lim))
            constraints.append(lambda z, i=i: float(-z[i] - lim))
        barrier_objective = apply_barrier(
            quad_lower, BarrierSpec(constraints=tuple(constraints), alpha=alpha)
        )
        partials = AnalyticPartials(
            dz_k=barrier_dz_k,
            dp_k=lambda z, p: dp_k_const,
            hp_k=lambda z, p: np.zeros((m * n, n)),
            dpz_k=lambda z, p: np.zeros((m * n, m)),
            dzp_k=lambda z, p: np.zeros((m * m, n)),
            hz_k=barrier_hz_k,
            **common_fu,
        )
        problem = BilevelProblem(
            dim_z=m,
            dim_p=n,
            upper=upper,
            lower_objective=barrier_objective,
            fixed_point=barrier_fixed_point,
            partials=partials,
        )
        name = "inverse_lqr_barrier"

    return ProblemInstance(
        name=name,
        problem=problem,
        p0=_ro(np.zeros(n)),
        z0=_ro(np.zeros(m)),
        rng_seed=seed,
        known_optimum=(
            {"p": _ro(p_hidden), "f_U": 0.0, "note": "expert reproduces itself"}
            if u_lim is None
            else None
        ),
        oracles={
            "p_hidden": _ro(p_hidden),
            "expert_controls": expert_u,
            "expert_states": expert_x,
            "unconstrained_solution": unconstrained_solution,
            "clamped_solution": clamped_solution,
            "G": _ro(g_mat),
            "lin_term": lin_term,
            "gamma": _ro(gamma),
            "phi_x0": _ro(phi_x0),
        },
        meta={
            "state_dim": nx,
            "control_dim": nu,
            "horizon": n_steps,
            "dt": dt,
            "u_lim": u_lim,
            "barrier_alpha": barrier_alpha,
        },
    )


PROBLEM_BUILDERS: dict[str, Callable[..., ProblemInstance]] = {
    "quadratic_toy": make_quadratic_toy,
    "scalar_cos": make_scalar_cos,
    "ridge": make_ridge,
    "diag_ridge": make_diag_ridge,
    "inverse_lqr": make_inverse_lqr,
}


def build_instance(name: str, **kwargs) -> ProblemInstance:
    """Construct a registered instance by name; unknown names/kwargs raise."""
    try:
        builder = PROBLEM_BUILDERS[name]
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; known: {sorted(PROBLEM_BUILDERS)}"
        ) from None
    return builder(**kwargs)
