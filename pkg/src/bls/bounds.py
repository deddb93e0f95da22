"""Error certificates for sensitivities computed at inexact lower solutions.

With ``A = D_z k`` and ``B = D_p k`` at the exact optimum, tildes for the
same quantities at an inexact point ``z`` with ``|z - z*| <= delta``, and
gain constants ``|A~ v| >= alpha1 |v|``, ``|A v| >= alpha2 |v|``, the
implicit-Jacobian error obeys

    |J~ - J|_F <= beta/alpha1 * delta + gamma R / (alpha1 alpha2) * delta,

the implicit-Hessian error obeys

    |H~ - H|_F <= (zeta + 2 eta kappa_J + nu kappa_J^2)/alpha1 * delta
                  + gamma R_H / (alpha1 alpha2) * delta,

and with a ridge ``eps`` added to ``A~`` (assuming ``v^T A~ v >= 0``)

    |J^ - J|_F <= beta delta / (alpha1 + eps)
                  + R (gamma delta + eps) / ((alpha1 + eps) alpha2).

Constants here are measured per instance -- the realized ratios for one
specific ``(z, z*)`` pair -- which yields the tightest honest certificate
rather than a uniform Lipschitz bound.  Any field can be overridden via
``dataclasses.replace``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import ift
from .errors import InfiniteBoundError
from .linalg import min_gain
from .problem import BilevelProblem, first_bundle, second_bundle

__all__ = [
    "BoundConstants",
    "estimate_constants",
    "first_order_bound",
    "second_order_bound",
    "regularized_bound",
    "optimize_epsilon",
]


@dataclass(frozen=True)
class BoundConstants:
    """Measured certificate constants for one inexact/exact solution pair.

    ``kappa_J`` is the first-order bound divided by ``delta`` (an a-priori
    chain, not the realized Jacobian error).  ``a_tilde_psd`` records
    whether the symmetric part of ``A~`` was positive semidefinite, the
    standing assumption of the regularized bound.
    """

    delta: float
    alpha1: float
    alpha2: float
    beta: float
    gamma: float
    R: float
    zeta: float
    eta: float
    nu: float
    kappa_J: float
    R_H: float
    epsilon: float = 0.0
    a_tilde_psd: bool = True

    def __post_init__(self):
        for name in ("delta", "alpha1", "alpha2", "beta", "gamma", "R",
                     "zeta", "eta", "nu", "kappa_J", "R_H", "epsilon"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _ratio(num: float, delta: float) -> float:
    if delta == 0.0:
        return 0.0
    return num / delta


def estimate_constants(
    problem: BilevelProblem,
    z,
    z_star,
    p,
    epsilon: float = 0.0,
) -> BoundConstants:
    """Measure certificate constants for the pair ``(z, z_star)`` at ``p``.

    Gains come from inverse power iteration, difference rates from the
    realized Frobenius/operator norms divided by ``delta``.  ``R_H`` is the
    bracket norm at the exact solution.  A zero gain is reported as
    ``alpha = 0`` (the bound evaluators then raise
    :class:`InfiniteBoundError`).
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    z_star = np.asarray(z_star, dtype=np.float64).reshape(-1)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    delta = float(np.linalg.norm(z - z_star))

    fb_tilde = first_bundle(problem, z, p)
    fb_star = first_bundle(problem, z_star, p)
    sb_tilde = second_bundle(problem, z, p)
    sb_star = second_bundle(problem, z_star, p)

    a_tilde, a_star = fb_tilde.dz_k, fb_star.dz_k
    b_tilde, b_star = fb_tilde.dp_k, fb_star.dp_k

    alpha1 = min_gain(a_tilde)
    alpha2 = min_gain(a_star)
    gamma = _ratio(float(np.linalg.norm(a_tilde - a_star, 2)), delta)
    beta = _ratio(float(np.linalg.norm(b_tilde - b_star, "fro")), delta)
    big_r = float(np.linalg.norm(b_star, "fro"))
    zeta = _ratio(float(np.linalg.norm(sb_tilde.hp_k.data - sb_star.hp_k.data, "fro")), delta)
    eta = _ratio(float(np.linalg.norm(sb_tilde.dzp_k.data - sb_star.dzp_k.data, "fro")), delta)
    nu = _ratio(float(np.linalg.norm(sb_tilde.hz_k.data - sb_star.hz_k.data, "fro")), delta)

    if alpha1 > 0.0 and alpha2 > 0.0:
        kappa_j = beta / alpha1 + gamma * big_r / (alpha1 * alpha2)
        sens_star = ift.ift_jacobian(fb_star)
        r_h = float(np.linalg.norm(ift.hessian_bracket(fb_star, sb_star, sens_star).data, "fro"))
    else:
        kappa_j = float("inf") if delta > 0.0 else 0.0
        r_h = float("inf")

    sym = 0.5 * (a_tilde + a_tilde.T)
    eig_min = float(np.linalg.eigvalsh(sym).min())
    psd = eig_min >= -1e-10 * max(1.0, float(np.abs(a_tilde).max()))

    return BoundConstants(
        delta=delta,
        alpha1=alpha1,
        alpha2=alpha2,
        beta=beta,
        gamma=gamma,
        R=big_r,
        zeta=zeta,
        eta=eta,
        nu=nu,
        kappa_J=kappa_j,
        R_H=r_h,
        epsilon=float(epsilon),
        a_tilde_psd=psd,
    )


def _require_gains(c: BoundConstants, *, need_alpha1: bool = True) -> None:
    if need_alpha1 and c.alpha1 <= 0.0:
        raise InfiniteBoundError("alpha1 is zero: bound is infinite")
    if c.alpha2 <= 0.0:
        raise InfiniteBoundError("alpha2 is zero: bound is infinite")


def first_order_bound(c: BoundConstants) -> float:
    """Implicit-Jacobian error bound for the constants ``c``."""
    _require_gains(c)
    return c.beta * c.delta / c.alpha1 + c.R * (c.gamma * c.delta) / (c.alpha1 * c.alpha2)


def second_order_bound(c: BoundConstants) -> float:
    """Implicit-Hessian error bound for the constants ``c``."""
    _require_gains(c)
    if not np.isfinite(c.kappa_J) or not np.isfinite(c.R_H):
        raise InfiniteBoundError("kappa_J or R_H is infinite")
    lead = (c.zeta + 2.0 * c.eta * c.kappa_J + c.nu * c.kappa_J**2) / c.alpha1
    return lead * c.delta + c.gamma * c.R_H / (c.alpha1 * c.alpha2) * c.delta


def regularized_bound(c: BoundConstants) -> float:
    """Jacobian error bound when a ridge ``c.epsilon`` is added to ``A~``.

    Reduces exactly to :func:`first_order_bound` at ``epsilon = 0``.
    Requires the recorded ``v^T A~ v >= 0`` assumption so the ridge adds to
    the gain.
    """
    if c.epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if c.alpha1 + c.epsilon <= 0.0:
        raise InfiniteBoundError("alpha1 + epsilon is zero: bound is infinite")
    _require_gains(c, need_alpha1=False)
    return c.beta * c.delta / (c.alpha1 + c.epsilon) + c.R * (
        c.gamma * c.delta + c.epsilon
    ) / ((c.alpha1 + c.epsilon) * c.alpha2)


def optimize_epsilon(c: BoundConstants, eps_max: float) -> tuple[float, float]:
    """Minimize the regularized bound over ``eps in [0, eps_max]``.

    Logarithmic 200-point grid scan plus the endpoints; the returned bound
    never exceeds the unregularized one because 0 is always a candidate.
    """
    if eps_max <= 0:
        raise ValueError("eps_max must be positive")
    candidates = np.concatenate(([0.0], eps_max * np.logspace(-12.0, 0.0, 200)))
    best_eps = 0.0
    best_val = regularized_bound(replace(c, epsilon=0.0))
    for eps in candidates[1:]:
        val = regularized_bound(replace(c, epsilon=float(eps)))
        if val < best_val:
            best_val = val
            best_eps = float(eps)
    return best_eps, best_val
